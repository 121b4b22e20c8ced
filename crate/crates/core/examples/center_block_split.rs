//! Center-block holdout partitions across the sweep fractions, with window
//! counts and a leakage audit, at full and reduced rate.

use vibroflow::dataset::{center_block_partition, holdout_sweep_specs, to_samples, window_starts, PartitionManifest, Split, SplitSpec};

fn main() -> vibroflow::Result<()> {
    let base = SplitSpec::default();
    for (name, rate, duration) in [("full", 250_000.0, 16.0), ("desk", 25_000.0, 4.0)] {
        let window = to_samples(base.window_s, rate)?;
        let train_stride = to_samples(base.train_stride_s, rate)?;
        let eval_stride = to_samples(base.eval_stride(), rate)?;
        println!("{name}: {duration} s at {rate} Hz, window {window} samples, train stride {train_stride}");
        for spec in holdout_sweep_specs(&base) {
            let p = center_block_partition(duration, rate, &spec)?;
            let count = |split: Split, stride: usize| -> usize {
                p.ranges(split).iter().map(|r| window_starts(*r, window, stride).count()).sum()
            };
            println!(
                "  test {:>3.0}%: test block {:.2}..{:.2} s, windows train {:>5} validation {:>3} test {:>3}, leaks {}",
                spec.test_frac * 100.0,
                p.test.to_time(rate).start,
                p.test.to_time(rate).end,
                count(Split::Train, train_stride),
                count(Split::Validation, eval_stride),
                count(Split::Test, eval_stride),
                p.leakage_violations(window, train_stride, eval_stride)
            );
        }
    }
    let p = center_block_partition(16.0, 250_000.0, &base)?;
    println!("\n{}", PartitionManifest { run_label: "Z-1".into(), split: base, partition: p }.to_text());
    Ok(())
}
