//! Semi-supervised training on the synthetic task, against the labeled-only
//! baseline. Pass `desk` for the full-size run.

use mixtext::harness::{run_experiment, RunConfig};
use mixtext::trainer::TrainMode;

fn main() -> mixtext::Result<()> {
    let desk = std::env::args().nth(1).as_deref() == Some("desk");
    let base = if desk {
        RunConfig::desk(0)
    } else {
        RunConfig::smoke(0)
    };
    for mode in [TrainMode::Supervised, TrainMode::Tmix, TrainMode::Mixtext] {
        let mut cfg = base.clone();
        cfg.train.mode = mode;
        let out = run_experiment(&cfg, &format!("{mode:?}"))?;
        println!(
            "{:<10} test acc {:.4}  best epoch {:>2}  {:.1}s",
            out.record.label,
            out.record.test_acc,
            out.record.best_epoch,
            out.record.wall_clock_secs.unwrap_or(0.0)
        );
        for m in &out.record.metrics {
            println!(
                "    epoch {:>2} train {:.4} margin {:.4} dev loss {:.4} dev acc {:.3}",
                m.epoch, m.l_tmix, m.l_margin, m.dev_loss, m.dev_acc
            );
        }
    }
    Ok(())
}
