//! Scaling sweeps and grouping ablations with a resumable job journal.
//!
//! Each finished job appends one JSON line `{key, job, rows}` to
//! `journal.jsonl`, where `key` hashes the resolved config minus seeds. With
//! `--resume`, jobs whose (key, job) pair is already journaled are skipped.

use std::collections::{BTreeMap, HashMap};
use std::fs::{self, File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::Mutex;
use std::time::{SystemTime, UNIX_EPOCH};

use anyhow::{Context, Result};
use rayon::prelude::*;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use mos_core::synthbench::{
    ablation_job, gen_benchmark, scaled_config, scaling_job, AblationRow, Regime, ScalingRow, Strategy,
};
use mos_core::Method;

use crate::commands::{bench_config, prepare_out, train_config};
use crate::config::{bail_config, RunConfig};

#[derive(Serialize, Deserialize)]
struct Entry {
    key: String,
    job: String,
    rows: serde_json::Value,
}

struct Journal {
    key: String,
    done: HashMap<String, serde_json::Value>,
    file: Mutex<File>,
}

impl Journal {
    fn open(path: &Path, key: String, resume: bool) -> Result<Self> {
        let mut done = HashMap::new();
        if resume && path.exists() {
            let reader = BufReader::new(File::open(path)?);
            for line in reader.lines() {
                let line = line?;
                // a torn last line from an interrupted run is ignored
                let Ok(e) = serde_json::from_str::<Entry>(&line) else { continue };
                if e.key == key {
                    done.insert(e.job, e.rows);
                }
            }
        }
        let file = OpenOptions::new()
            .create(true)
            .write(true)
            .append(resume)
            .truncate(!resume)
            .open(path)
            .with_context(|| format!("opening {}", path.display()))?;
        Ok(Self { key, done, file: Mutex::new(file) })
    }

    fn record<T: Serialize>(&self, job: &str, rows: &[T]) -> Result<()> {
        let e = Entry { key: self.key.clone(), job: job.to_string(), rows: serde_json::to_value(rows)? };
        let mut line = serde_json::to_string(&e)?;
        line.push('\n');
        let mut f = self.file.lock().unwrap();
        f.write_all(line.as_bytes())?;
        f.flush()?;
        Ok(())
    }
}

struct Outcome<T> {
    rows: Vec<T>,
    ran: usize,
    reused: usize,
}

fn run_jobs<J, T, F>(jobs: &[(String, J)], journal: &Journal, f: F) -> Result<Outcome<T>>
where
    J: Sync,
    T: Serialize + DeserializeOwned + Send,
    F: Fn(&J) -> mos_core::Result<Vec<T>> + Sync,
{
    let mut rows = Vec::new();
    let mut todo = Vec::new();
    for (id, job) in jobs {
        match journal.done.get(id) {
            Some(v) => rows.extend(serde_json::from_value::<Vec<T>>(v.clone())?),
            None => todo.push((id, job)),
        }
    }
    let reused = jobs.len() - todo.len();
    let fresh: Vec<Vec<T>> = todo
        .par_iter()
        .map(|(id, job)| {
            let r = f(job)?;
            journal.record(id, &r)?;
            Ok(r)
        })
        .collect::<Result<_>>()?;
    let ran = fresh.len();
    rows.extend(fresh.into_iter().flatten());
    Ok(Outcome { rows, ran, reused })
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

fn write_sidecar(out: &Path, cfg: &RunConfig, experiment: &str, n_rows: usize, ran: usize, reused: usize, means: serde_json::Value) -> Result<()> {
    let ts = SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_secs());
    let side = serde_json::json!({
        "experiment": experiment,
        "config_hash": cfg.hash_without_seed(),
        "timestamp_unix": ts,
        "rows": n_rows,
        "jobs_run": ran,
        "jobs_reused": reused,
        "means": means,
    });
    fs::write(out.join(format!("{experiment}.json")), serde_json::to_string_pretty(&side)? + "\n")?;
    Ok(())
}

pub fn ablate(cfg: &RunConfig, resume: bool) -> Result<()> {
    let a = "ablate";
    let tc = train_config(cfg)?;
    let base = bench_config(cfg)?;
    let seeds: Vec<u64> = cfg.list(a, "seeds")?;
    if seeds.is_empty() {
        bail_config!("ablate.seeds is empty");
    }
    match cfg.raw(a, "experiment") {
        "scaling" => {
            let counts: Vec<usize> = cfg.list(a, "class_counts")?;
            if counts.is_empty() || counts.windows(2).any(|w| w[0] >= w[1]) {
                bail_config!("ablate.class_counts must be nonempty and strictly ascending");
            }
            let regime = match cfg.raw(a, "regime") {
                "fixed_per_class" => Regime::FixedPerClass,
                "fixed_total" => match cfg.opt(a, "budget")? {
                    Some(budget) => Regime::FixedTotal { budget },
                    None => bail_config!("ablate.regime = fixed_total needs ablate.budget"),
                },
                other => bail_config!("ablate.regime = {other:?}: expected fixed_per_class or fixed_total"),
            };
            let methods: Vec<Method> = cfg.list(a, "methods")?;
            if methods.is_empty() {
                bail_config!("ablate.methods is empty");
            }
            // surface budget and blob errors before any work starts
            for &c in &counts {
                let bc = scaled_config(&base, c, regime, seeds[0])?;
                bc.validate()?;
            }
            let out = prepare_out(cfg)?;
            let journal = Journal::open(&out.join("journal.jsonl"), cfg.hash_without_seed(), resume)?;
            let jobs: Vec<(String, (usize, u64))> = counts
                .iter()
                .flat_map(|&c| seeds.iter().map(move |&s| (format!("C={c}/seed={s}"), (c, s))))
                .collect();
            let mut o = run_jobs(&jobs, &journal, |&(c, s)| scaling_job(&base, c, regime, &methods, s, &tc))?;
            o.rows.sort_by_key(|r: &ScalingRow| (r.num_classes, r.method, r.seed));
            let mut csv = String::from("num_classes,method,seed,auroc,fpr95,in_accuracy\n");
            let mut groups: BTreeMap<(usize, Method), Vec<&ScalingRow>> = BTreeMap::new();
            for r in &o.rows {
                csv.push_str(&format!("{},{},{},{},{},{}\n", r.num_classes, r.method, r.seed, r.auroc, r.fpr95, r.in_accuracy));
                groups.entry((r.num_classes, r.method)).or_default().push(r);
            }
            fs::write(out.join("scaling.csv"), csv)?;
            let means: Vec<_> = groups
                .iter()
                .map(|((c, m), rs)| {
                    serde_json::json!({
                        "num_classes": c,
                        "method": m,
                        "auroc": mean(&rs.iter().map(|r| r.auroc).collect::<Vec<_>>()),
                        "fpr95": mean(&rs.iter().map(|r| r.fpr95).collect::<Vec<_>>()),
                        "in_accuracy": mean(&rs.iter().map(|r| r.in_accuracy).collect::<Vec<_>>()),
                    })
                })
                .collect();
            write_sidecar(&out, cfg, "scaling", o.rows.len(), o.ran, o.reused, means.into())?;
            println!("scaling: {} rows, ran {} jobs, reused {}", o.rows.len(), o.ran, o.reused);
        }
        "grouping" => {
            let ks: Vec<usize> = cfg.list(a, "k_values")?;
            let taxonomies: Vec<PathBuf> = cfg.list(a, "taxonomies")?;
            let mut strategies = Vec::new();
            for name in cfg.list::<String>(a, "strategies")? {
                strategies.push(match name.as_str() {
                    "cluster" => Strategy::Cluster,
                    "random" => Strategy::Random,
                    "taxonomy" if taxonomies.is_empty() => bail_config!("taxonomy strategy needs ablate.taxonomies"),
                    "taxonomy" => Strategy::Taxonomy(taxonomies.clone()),
                    other => bail_config!("unknown strategy {other:?}"),
                });
            }
            if ks.is_empty() || strategies.is_empty() {
                bail_config!("ablate.k_values and ablate.strategies must be nonempty");
            }
            let bench = gen_benchmark(&base)?;
            let c = bench.train.num_classes();
            if let Some(k) = ks.iter().find(|&&k| k == 0 || k > c) {
                bail_config!("K={k} must be between 1 and the class count {c}");
            }
            for s in &strategies {
                if let Strategy::Taxonomy(_) = s {
                    for &k in &ks {
                        s.partition(&bench, k, seeds[0])?;
                    }
                }
            }
            let out = prepare_out(cfg)?;
            let journal = Journal::open(&out.join("journal.jsonl"), cfg.hash_without_seed(), resume)?;
            let mut jobs = Vec::new();
            for s in &strategies {
                for &k in &ks {
                    for &seed in &seeds {
                        jobs.push((format!("{}/K={k}/seed={seed}", s.name()), (s, k, seed)));
                    }
                }
            }
            let mut o = run_jobs(&jobs, &journal, |&(s, k, seed)| Ok(vec![ablation_job(&bench, s, k, seed, &tc)?]))?;
            o.rows.sort_by(|x: &AblationRow, y| (&x.strategy, x.k, x.seed).cmp(&(&y.strategy, y.k, y.seed)));
            let mut csv = String::from("strategy,k,seed,auroc,fpr95,in_accuracy,matches_truth\n");
            let mut groups: BTreeMap<(&str, usize), Vec<&AblationRow>> = BTreeMap::new();
            for r in &o.rows {
                csv.push_str(&format!(
                    "{},{},{},{},{},{},{}\n",
                    r.strategy, r.k, r.seed, r.auroc, r.fpr95, r.in_accuracy, r.matches_truth
                ));
                groups.entry((r.strategy.as_str(), r.k)).or_default().push(r);
            }
            fs::write(out.join("ablation.csv"), csv)?;
            let means: Vec<_> = groups
                .iter()
                .map(|((s, k), rs)| {
                    serde_json::json!({
                        "strategy": s,
                        "k": k,
                        "auroc": mean(&rs.iter().map(|r| r.auroc).collect::<Vec<_>>()),
                        "fpr95": mean(&rs.iter().map(|r| r.fpr95).collect::<Vec<_>>()),
                        "in_accuracy": mean(&rs.iter().map(|r| r.in_accuracy).collect::<Vec<_>>()),
                    })
                })
                .collect();
            write_sidecar(&out, cfg, "ablation", o.rows.len(), o.ran, o.reused, means.into())?;
            println!("ablation: {} rows, ran {} jobs, reused {}", o.rows.len(), o.ran, o.reused);
        }
        other => bail_config!("ablate.experiment = {other:?}: expected scaling or grouping"),
    }
    Ok(())
}
