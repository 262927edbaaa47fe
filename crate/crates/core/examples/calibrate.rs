//! Searches block count, width and kernel sizes for configurations whose
//! footprint lands near a target, then prints the default's numbers.
//!
//! cargo run -p fcanet-core --example calibrate --release [params] [macs]

use fcanet::model::{count_footprint, AttentionKind, ModelConfig, Placement};

fn main() -> fcanet::Result<()> {
    let mut args = std::env::args().skip(1).map(|a| a.parse::<f64>().expect("numeric target"));
    let target_params = args.next().unwrap_or(119e3);
    let target_macs = args.next().unwrap_or(22.3e6);

    let mut hits = Vec::new();
    for blocks in 1..=8 {
        for channels in 1..=8 {
            for k in [3, 5, 7] {
                for kernel_1d in [3, 5, 7, 9] {
                    for ratio in [0.5, 0.75, 1.0] {
                        let cfg = ModelConfig {
                            blocks,
                            channels,
                            kernel_freq: k,
                            kernel_time: k,
                            kernel_1d,
                            mixer_ratio: ratio,
                            ..ModelConfig::default()
                        };
                        let fp = count_footprint(&cfg)?;
                        let dp = fp.params as f64 / target_params - 1.0;
                        let dm = fp.macs as f64 / target_macs - 1.0;
                        if dp.abs() <= 0.1 && dm.abs() <= 0.1 {
                            hits.push((dp.abs().max(dm.abs()), cfg, fp));
                        }
                    }
                }
            }
        }
    }
    hits.sort_by(|a, b| a.0.total_cmp(&b.0));
    for (err, cfg, fp) in hits.iter().take(10) {
        println!(
            "B={} C={} k={}x{} k1={} r={}  {fp}  worst deviation {:.1}%",
            cfg.blocks,
            cfg.channels,
            cfg.kernel_freq,
            cfg.kernel_time,
            cfg.kernel_1d,
            cfg.mixer_ratio,
            100.0 * err
        );
    }

    let default = ModelConfig::default();
    let base = count_footprint(&default.with_attention(AttentionKind::None, Placement::None))?;
    println!("default baseline : {base}");
    for kind in AttentionKind::MODULES {
        for p in Placement::INSERTING {
            let fp = count_footprint(&default.with_attention(kind, p))?;
            println!(
                "default {:>4}-{:<5}: {fp}  MAC overhead {:.3}%",
                kind.as_str(),
                p.as_str(),
                100.0 * (fp.macs as f64 / base.macs as f64 - 1.0)
            );
        }
    }
    Ok(())
}
