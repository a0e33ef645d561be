//! A component ablation on the smoke task, summarized and exported as CSV.

use mixtext::harness::{
    export_metrics, run_ablation, summarize, AblationMode, AblationSpec, ExportFormat, RunConfig,
};

fn main() -> mixtext::Result<()> {
    let spec = AblationSpec::new(AblationMode::StripComponent, 2, RunConfig::smoke(0));
    let records = run_ablation(&spec)?;
    for s in summarize(&records) {
        println!(
            "{:<24} {} runs  {:.4} ± {:.4}",
            s.label, s.runs, s.mean_test_acc, s.std_test_acc
        );
    }
    let out = std::env::temp_dir().join("mixtext_ablation.csv");
    export_metrics(&records, &out, ExportFormat::Csv)?;
    println!("curves written to {}", out.display());
    Ok(())
}
