//! Training runs over (flag set × seed), fanned out across threads and
//! merged in sorted order so parallel and serial runs emit identical files.

use std::time::Instant;

use rayon::prelude::*;

use crate::error::Result;
use crate::harness::config::RunConfig;
use crate::harness::metrics::{sort_records, MetricsRecord};
use crate::pyramid::{train, AblationFlags, LrFpnModel, TrainTrace};
use crate::reference::PlainFpn;

/// Build, train and record one run. The trained model is returned for
/// checkpointing.
pub fn run_one(cfg: &RunConfig, flags: AblationFlags, seed: u64) -> Result<(MetricsRecord, LrFpnModel)> {
    let t0 = Instant::now();
    let mut model = LrFpnModel::new(cfg.model_config(), flags, seed)?;
    model.conv_path = cfg.conv_path;
    let init = t0.elapsed().as_secs_f64();
    let t1 = Instant::now();
    let trace = train(&mut model, &cfg.train_config(), seed)?;
    let record = MetricsRecord {
        flags,
        seed,
        losses: trace.losses,
        timings: vec![("init", init), ("train", t1.elapsed().as_secs_f64())],
    };
    Ok((record, model))
}

/// Distinct flag sets (first occurrence wins), each run on every seed.
pub fn run_ablation(cfg: &RunConfig, flag_sets: &[AblationFlags], seeds: &[u64]) -> Result<Vec<MetricsRecord>> {
    cfg.validate()?;
    let mut distinct: Vec<AblationFlags> = Vec::with_capacity(flag_sets.len());
    for &f in flag_sets {
        if !distinct.iter().any(|d| d.bits() == f.bits()) {
            distinct.push(f.normalized());
        }
    }
    let jobs: Vec<(AblationFlags, u64)> = distinct.iter().flat_map(|&f| seeds.iter().map(move |&s| (f, s))).collect();
    let mut records = jobs
        .par_iter()
        .map(|&(flags, seed)| run_one(cfg, flags, seed).map(|(r, _)| r))
        .collect::<Result<Vec<_>>>()?;
    sort_records(&mut records);
    Ok(records)
}

/// Trains the independent plain FPN from the weights a baseline LR-FPN
/// model would start from under `seed`.
pub fn run_reference(cfg: &RunConfig, seed: u64) -> Result<TrainTrace> {
    let mut model = LrFpnModel::new(cfg.model_config(), AblationFlags::BASELINE, seed)?;
    model.conv_path = cfg.conv_path;
    let mut plain = PlainFpn::from_lrfpn(&model)?;
    train(&mut plain, &cfg.train_config(), seed)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny() -> RunConfig {
        RunConfig { steps: 4, batch: 2, ..RunConfig::miniature() }
    }

    #[test]
    fn rows_cover_every_distinct_set_and_seed() {
        let cfg = tiny();
        let sets = [AblationFlags::FULL, AblationFlags::BASELINE, AblationFlags::parse("sp,pp,si,ci").unwrap()];
        let recs = run_ablation(&cfg, &sets, &[1, 0]).unwrap();
        assert_eq!(recs.len(), 4);
        assert_eq!(recs[0].flags.bits(), 0);
        assert_eq!(recs[0].seed, 0);
    }

    #[test]
    fn baseline_matches_reference_bitwise() {
        let cfg = tiny();
        let recs = run_ablation(&cfg, &[AblationFlags::BASELINE], &[3]).unwrap();
        let reference = run_reference(&cfg, 3).unwrap();
        assert!(TrainTrace { losses: recs[0].losses.clone() }.bit_eq(&reference));
    }
}
