//! `asm train`: resolve the config, write the run directory, train (once or
//! per seed), and print the metrics table.

use std::path::Path;

use asm_core::checkpoint::save_checkpoint;
use asm_core::manifest::{load_features, FeatureSet};
use asm_core::mixer::MixerModel;
use asm_core::rng::SplitMix64;
use asm_core::train::{evaluate, format_mean_sd, mean_sd, train, EpochRecord, TrainOutcome};

use crate::config::{resolve_train, ResolvedRun, RunConfig};
use crate::CliError;

struct SeedResult {
    seed: u64,
    best_epoch: usize,
    val_acc: f64,
    val_auc: f64,
    test_acc: Option<f64>,
    test_auc: Option<f64>,
}

fn write_epochs_csv(path: &Path, records: &[EpochRecord]) -> Result<(), CliError> {
    let mut text = String::from(EpochRecord::CSV_HEADER);
    text.push('\n');
    for r in records {
        text.push_str(&r.csv_row());
        text.push('\n');
    }
    std::fs::write(path, text).map_err(|e| CliError::Runtime(e.into()))?;
    Ok(())
}

fn run_one_seed(
    run: &ResolvedRun,
    seed: u64,
    dir: &Path,
    train_set: &FeatureSet,
    val_set: &FeatureSet,
    test_set: Option<&FeatureSet>,
) -> Result<SeedResult, CliError> {
    std::fs::create_dir_all(dir).map_err(|e| CliError::Runtime(e.into()))?;
    let mut tcfg = run.config.train;
    tcfg.seed = seed;
    let mut rng = SplitMix64::new(seed);
    let mut model =
        MixerModel::build(run.config.mixer, &mut rng).map_err(|e| CliError::Runtime(e.into()))?;

    let outcome: TrainOutcome = train(&mut model, train_set, val_set, &tcfg, &run.config.frontend)
        .map_err(|e| CliError::Runtime(e.into()))?;
    for r in &outcome.records {
        println!(
            "seed {seed} epoch {:>3}/{}  lr {:<10.4e} loss {:<9.5} val_acc {:.4} val_auc {:.4} ({:.2}s)",
            r.epoch, tcfg.epochs, r.lr, r.train_loss, r.val_acc, r.val_auc, r.seconds
        );
    }

    write_epochs_csv(&dir.join("epochs.csv"), &outcome.records)?;
    save_checkpoint(&outcome.best, &dir.join("best.asmc"))
        .map_err(|e| CliError::Runtime(e.into()))?;

    let (test_acc, test_auc) = match test_set {
        Some(set) => {
            let (a, u) = evaluate(&outcome.best, set).map_err(|e| CliError::Runtime(e.into()))?;
            (Some(a), Some(u))
        }
        None => (None, None),
    };
    Ok(SeedResult {
        seed,
        best_epoch: outcome.best_epoch,
        val_acc: outcome.best_val_acc,
        val_auc: outcome.best_val_auc,
        test_acc,
        test_auc,
    })
}

fn opt4(v: Option<f64>) -> String {
    v.map(|x| format!("{x:.4}")).unwrap_or_default()
}

fn print_table(rows: &[SeedResult], summary: Option<&[String; 4]>) {
    println!(
        "{:<10} {:<11} {:<15} {:<15} {:<15} {:<15}",
        "seed", "best_epoch", "val_acc", "val_auc", "test_acc", "test_auc"
    );
    for r in rows {
        println!(
            "{:<10} {:<11} {:<15.4} {:<15.4} {:<15} {:<15}",
            r.seed,
            r.best_epoch,
            r.val_acc,
            r.val_auc,
            opt4(r.test_acc),
            opt4(r.test_auc)
        );
    }
    if let Some([va, vu, ta, tu]) = summary {
        println!("{:<10} {:<11} {:<15} {:<15} {:<15} {:<15}", "mean\u{00b1}sd", "", va, vu, ta, tu);
    }
}

pub fn run(cfg: RunConfig, jobs: usize) -> Result<(), CliError> {
    let resolved = resolve_train(cfg, jobs)?;
    let run = &resolved;

    std::fs::create_dir_all(&run.out_dir)
        .map_err(|e| CliError::Usage(format!("out_dir {}: {e}", run.out_dir.display())))?;
    let run_json = serde_json::to_string_pretty(&run.config).expect("config serializes");
    std::fs::write(run.out_dir.join("run.json"), run_json)
        .map_err(|e| CliError::Runtime(e.into()))?;

    let cache = run.config.data.cache;
    let train_set = load_features(&run.train_manifest, &run.config.frontend, &run.config.mixer, cache, jobs)
        .map_err(|e| CliError::Runtime(e.into()))?;
    let val_set = load_features(&run.val_manifest, &run.config.frontend, &run.config.mixer, cache, jobs)
        .map_err(|e| CliError::Runtime(e.into()))?;
    let test_set = match &run.test_manifest {
        Some(m) => Some(
            load_features(m, &run.config.frontend, &run.config.mixer, cache, jobs)
                .map_err(|e| CliError::Runtime(e.into()))?,
        ),
        None => None,
    };

    match run.config.seeds.clone() {
        None => {
            let seed = run.config.train.seed;
            let result =
                run_one_seed(run, seed, &run.out_dir, &train_set, &val_set, test_set.as_ref())?;
            print_table(std::slice::from_ref(&result), None);
            Ok(())
        }
        Some(seeds) => {
            let mut results = Vec::with_capacity(seeds.len());
            for &seed in &seeds {
                let dir = run.out_dir.join(format!("seed-{seed}"));
                results.push(run_one_seed(run, seed, &dir, &train_set, &val_set, test_set.as_ref())?);
            }
            let col = |f: &dyn Fn(&SeedResult) -> Option<f64>| -> String {
                let vals: Vec<f64> = results.iter().filter_map(f).collect();
                if vals.len() == results.len() {
                    let (m, s) = mean_sd(&vals);
                    format_mean_sd(m, s)
                } else {
                    String::new()
                }
            };
            let summary = [
                col(&|r| Some(r.val_acc)),
                col(&|r| Some(r.val_auc)),
                col(&|r| r.test_acc),
                col(&|r| r.test_auc),
            ];

            let mut csv = String::from("seed,best_epoch,val_acc,val_auc,test_acc,test_auc\n");
            for r in &results {
                csv.push_str(&format!(
                    "{},{},{},{},{},{}\n",
                    r.seed,
                    r.best_epoch,
                    r.val_acc,
                    r.val_auc,
                    r.test_acc.map(|v| v.to_string()).unwrap_or_default(),
                    r.test_auc.map(|v| v.to_string()).unwrap_or_default()
                ));
            }
            csv.push_str(&format!(
                "mean\u{00b1}sd,,{},{},{},{}\n",
                summary[0], summary[1], summary[2], summary[3]
            ));
            std::fs::write(run.out_dir.join("summary.csv"), csv)
                .map_err(|e| CliError::Runtime(e.into()))?;

            print_table(&results, Some(&summary));
            Ok(())
        }
    }
}
