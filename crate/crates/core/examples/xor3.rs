//! Cross-modal synthetic experiment: AMH-3 vs the concat baseline vs linear
//! probes on the xor3 task.
//!
//! cargo run --release -p amh-core --example xor3 -- [noise] [salient_rate] [hidden] [epochs] [seeds] [min_len] [max_len] [lr]

use amh_core::amh::{AttentionSharing, Modality};
use amh_core::data::{generate_synthetic, SyntheticRule, SyntheticSpec};
use amh_core::model::{LabelSet, ModelConfig, ModelKind};
use amh_core::trainer::{probe_modalities, train_run, ProbeConfig, TrainConfig};

fn main() -> amh_core::Result<()> {
    let args: Vec<f64> = std::env::args()
        .skip(1)
        .map(|a| a.parse().expect("number"))
        .collect();
    let arg = |i: usize, d: f64| args.get(i).copied().unwrap_or(d);
    let (noise, salient, hidden, epochs, seeds) = (
        arg(0, 0.5),
        arg(1, 1.0),
        arg(2, 16.0) as usize,
        arg(3, 40.0) as usize,
        arg(4, 5.0) as u64,
    );
    let (min_len, max_len, lr) = (arg(5, 4.0) as usize, arg(6, 8.0) as usize, arg(7, 3e-3));
    let mut amh_total = 0.0;
    let mut mdre_total = 0.0;
    for seed in 0..seeds {
        let spec = SyntheticSpec {
            n_samples: 800,
            min_len,
            max_len,
            audio_dim: 8,
            video_dim: 8,
            vocab_size: 32,
            n_classes: 4,
            noise,
            salient_rate: salient,
            rule: SyntheticRule::Xor3,
            seed,
        };
        let data = generate_synthetic(&spec)?;
        let (train, test) = data.split_at(600);
        let mut best_probe: f64 = 0.0;
        for m in [Modality::Audio, Modality::Text, Modality::Video] {
            let r = probe_modalities(
                train,
                test,
                &[m],
                spec.vocab_size,
                4,
                ProbeConfig::default(),
            )?;
            best_probe = best_probe.max(r.wa);
        }
        let tc = TrainConfig {
            max_epochs: epochs,
            lr,
            seed,
            ..TrainConfig::default()
        };
        let mut line = format!("seed {seed} probe {best_probe:.3}");
        for kind in [ModelKind::Amh { n_hops: 3 }, ModelKind::Mdre] {
            let config = ModelConfig {
                kind,
                audio_dim: 8,
                video_dim: 8,
                vocab_size: 32,
                embed_dim: 8,
                hidden_dim: hidden,
                sharing: AttentionSharing::PerTarget,
                labels: LabelSet::generic(4)?,
            };
            let t0 = std::time::Instant::now();
            let (_, r) = train_run(&config, train, &[], test, &tc, 0, 0)?;
            let wa = r.test.unwrap().wa;
            if kind == ModelKind::Mdre {
                mdre_total += wa
            } else {
                amh_total += wa
            }
            line += &format!(
                "  {} wa {wa:.3} loss {:.3} ({:.1}s)",
                kind.label(),
                r.final_train_loss,
                t0.elapsed().as_secs_f64()
            );
        }
        println!("{line}");
    }
    println!(
        "mean AMH {:.3} MDRE {:.3}",
        amh_total / seeds as f64,
        mdre_total / seeds as f64
    );
    Ok(())
}
