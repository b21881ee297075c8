use std::collections::HashMap;
use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::Path;

use anyhow::{bail, Context, Result};
use serde::Serialize;

use mhmm::inference::decode_subject;
use mhmm::selection::{
    adjusted_rand_index, map_entropy, marginal_cutoffs, mean_time_per_state, n_observations, nu_k,
    select_components, SelectionRow,
};
use mhmm::sequences::{read_long_csv, segment_on_missing, validate_gap_assumption, write_long_csv, GapReport};
use mhmm::simulate::{
    convergence_experiment, misclassification_experiment, write_convergence_csv, Case, ScenarioSpec,
};
use mhmm::{FitResult, MixtureHmmParams, SegmentedSubject};

use crate::{
    ConvergenceArgs, CutoffsArgs, DecodeArgs, FitArgs, MisclassificationArgs, SelectArgs, SimulateArgs,
};

fn create(path: &Path) -> Result<BufWriter<File>> {
    let f = File::create(path).with_context(|| format!("creating {}", path.display()))?;
    Ok(BufWriter::new(f))
}

fn out_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("creating directory {}", dir.display()))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut w = create(path)?;
    serde_json::to_writer_pretty(&mut w, value)?;
    writeln!(w)?;
    w.flush()?;
    Ok(())
}

fn load_subjects(path: &Path, min_gap: usize) -> Result<Vec<SegmentedSubject>> {
    let series = read_long_csv(path).with_context(|| format!("reading {}", path.display()))?;
    if series.is_empty() {
        bail!("{}: no subjects", path.display());
    }
    let subjects: Vec<SegmentedSubject> =
        series.iter().map(|s| segment_on_missing(s, min_gap)).collect::<mhmm::Result<_>>()?;
    let short: usize = subjects.iter().map(|s| s.short_gaps.len()).sum();
    if short > 0 {
        eprintln!("warning: {short} gaps are shorter than {min_gap}; segments restart at the stationary law");
    }
    Ok(subjects)
}

fn load_model(path: &Path) -> Result<MixtureHmmParams> {
    MixtureHmmParams::load(path).with_context(|| format!("loading model {}", path.display()))
}

pub fn simulate(a: &SimulateArgs) -> Result<()> {
    let params = match &a.model {
        Some(p) => load_model(p)?,
        None => a.case.params(),
    };
    if a.n == 0 {
        bail!("n must be at least 1");
    }
    let spec = ScenarioSpec { params, n: a.n, t_len: a.t_len, missingness: a.missingness, replicates: 1, seed: a.seed };
    let d = spec.sample(0)?;
    out_dir(&a.out)?;
    let mut w = create(&a.out.join("data.csv"))?;
    write_long_csv(&d.series, &mut w)?;
    w.flush()?;

    let mut z = csv::Writer::from_writer(create(&a.out.join("truth_z.csv"))?);
    z.write_record(["subject_id", "class"])?;
    for (s, &k) in d.series.iter().zip(&d.z) {
        z.write_record([s.subject_id.clone(), (k + 1).to_string()])?;
    }
    z.flush()?;

    let mut x = csv::Writer::from_writer(create(&a.out.join("truth_x.csv"))?);
    x.write_record(["subject_id", "t", "state"])?;
    for (s, path) in d.series.iter().zip(&d.x) {
        for (t, h) in s.times.iter().zip(path) {
            x.write_record([s.subject_id.clone(), t.to_string(), (h + 1).to_string()])?;
        }
    }
    x.flush()?;
    spec.params.save(a.out.join("truth_model.json"))?;
    eprintln!("wrote {} subjects to {}", a.n, a.out.display());
    Ok(())
}

#[derive(Serialize)]
struct Assignment<'a> {
    subject_id: &'a str,
    class: usize,
}

#[derive(Serialize)]
struct FitReport<'a> {
    k: usize,
    m: usize,
    n_subjects: usize,
    n_observations: usize,
    loglik: f64,
    nu_k: usize,
    bic: f64,
    icl: f64,
    entropy: f64,
    n_iterations: usize,
    converged: bool,
    restart_index: usize,
    n_degenerate: usize,
    max_relative_decrease: f64,
    gap_report: GapReport,
    #[serde(skip_serializing_if = "Option::is_none")]
    truth_ari: Option<f64>,
    partition: Vec<Assignment<'a>>,
    loglik_trace: &'a [f64],
}

fn read_truth(path: &Path) -> Result<HashMap<String, String>> {
    let mut rdr = csv::Reader::from_path(path).with_context(|| format!("reading {}", path.display()))?;
    let mut map = HashMap::new();
    for rec in rdr.records() {
        let rec = rec?;
        if rec.len() != 2 {
            bail!("{}: expected subject_id,class rows", path.display());
        }
        map.insert(rec[0].to_string(), rec[1].to_string());
    }
    Ok(map)
}

fn truth_ari(path: &Path, data: &[SegmentedSubject], f: &FitResult) -> Result<f64> {
    let truth = read_truth(path)?;
    let labels: Vec<&str> = data
        .iter()
        .map(|s| {
            truth
                .get(&s.subject_id)
                .map(String::as_str)
                .with_context(|| format!("subject {} missing from {}", s.subject_id, path.display()))
        })
        .collect::<Result<_>>()?;
    Ok(adjusted_rand_index(&f.partition, &labels)?)
}

fn write_tau(path: &Path, data: &[SegmentedSubject], f: &FitResult) -> Result<()> {
    let mut w = csv::Writer::from_writer(create(path)?);
    let k = f.params.k();
    let mut header = vec!["subject_id".to_string()];
    header.extend((1..=k).map(|c| format!("tau_{c}")));
    header.push("map_class".into());
    w.write_record(&header)?;
    for ((s, row), &z) in data.iter().zip(&f.tau).zip(&f.partition) {
        let mut rec = vec![s.subject_id.clone()];
        rec.extend(row.iter().map(|v| v.to_string()));
        rec.push((z + 1).to_string());
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

pub fn fit(a: &FitArgs) -> Result<()> {
    let data = load_subjects(&a.data, a.min_gap)?;
    let config = a.em.config();
    eprintln!("fitting K={} M={} on {} subjects with {} restarts", a.k, a.m, data.len(), config.restarts);
    let f = mhmm::fit(&data, a.k, a.m, &config)?;
    let gap_report = validate_gap_assumption(&data, &f.params, a.eta)?;
    let truth = a.truth.as_ref().map(|p| truth_ari(p, &data, &f)).transpose()?;
    let row = SelectionRow::from_fit(&f, &data);
    out_dir(&a.out)?;
    f.params.save(a.out.join("model.json"))?;
    write_tau(&a.out.join("tau.csv"), &data, &f)?;
    let report = FitReport {
        k: a.k,
        m: a.m,
        n_subjects: data.len(),
        n_observations: n_observations(&data),
        loglik: f.loglik,
        nu_k: nu_k(a.k, a.m),
        bic: row.bic,
        icl: row.icl,
        entropy: map_entropy(&f.tau, &f.partition),
        n_iterations: f.n_iterations,
        converged: f.converged,
        restart_index: f.restart_index,
        n_degenerate: f.n_degenerate,
        max_relative_decrease: f.max_relative_decrease,
        gap_report,
        truth_ari: truth,
        partition: data
            .iter()
            .zip(&f.partition)
            .map(|(s, &z)| Assignment { subject_id: &s.subject_id, class: z + 1 })
            .collect(),
        loglik_trace: &f.loglik_trace,
    };
    write_json(&a.out.join("fit_report.json"), &report)?;
    eprintln!(
        "loglik {:.6} BIC {:.6} ICL {:.6} gap check {:?}",
        f.loglik, row.bic, row.icl, report.gap_report.status
    );
    Ok(())
}

#[derive(Serialize)]
struct SelectionBest {
    m: usize,
    best_bic: Option<usize>,
    best_icl: Option<usize>,
    failed: Vec<usize>,
}

pub fn select(a: &SelectArgs) -> Result<()> {
    if a.k_min == 0 || a.k_min > a.k_max {
        bail!("need 1 <= k-min <= k-max, got {}..{}", a.k_min, a.k_max);
    }
    let data = load_subjects(&a.data, a.min_gap)?;
    let ks: Vec<usize> = (a.k_min..=a.k_max).collect();
    let sel = select_components(&data, &ks, a.m, &a.em.config())?;
    out_dir(&a.out)?;
    let mut w = create(&a.out.join("selection.csv"))?;
    sel.write_csv(a.m, &mut w)?;
    w.flush()?;
    let failed = sel.fits.iter().filter(|(_, f)| f.is_err()).map(|(k, _)| *k).collect();
    write_json(
        &a.out.join("selection_best.json"),
        &SelectionBest { m: a.m, best_bic: sel.best_bic, best_icl: sel.best_icl, failed },
    )?;
    eprintln!("best K by BIC {:?}, by ICL {:?}", sel.best_bic, sel.best_icl);
    Ok(())
}

pub fn decode(a: &DecodeArgs) -> Result<()> {
    let params = load_model(&a.model)?;
    let data = load_subjects(&a.data, a.min_gap)?;
    let m = params.m();
    let mut w = csv::Writer::from_writer(create(&a.out)?);
    let mut header: Vec<String> = ["subject_id", "segment", "t", "map_state"].map(String::from).to_vec();
    header.extend((1..=m).map(|h| format!("eta_{h}")));
    header.push("map_class".into());
    w.write_record(&header)?;
    for s in &data {
        let d = decode_subject(s, &params).with_context(|| format!("decoding subject {}", s.subject_id))?;
        for (seg, ((path, eta), &start)) in d.paths.iter().zip(&d.eta).zip(&s.segment_starts).enumerate() {
            for (t, &h) in path.iter().enumerate() {
                let mut rec = vec![
                    s.subject_id.clone(),
                    (seg + 1).to_string(),
                    (start + t as i64).to_string(),
                    (h + 1).to_string(),
                ];
                rec.extend(eta[t * m..(t + 1) * m].iter().map(|v| v.to_string()));
                rec.push((d.map_class + 1).to_string());
                w.write_record(&rec)?;
            }
        }
    }
    w.flush()?;
    Ok(())
}

pub fn cutoffs(a: &CutoffsArgs) -> Result<()> {
    let params = load_model(&a.model)?;
    let c = marginal_cutoffs(&params);
    if c.irregular {
        eprintln!("warning: the most probable state is not increasing in the value; cutoffs are irregular");
    }
    out_dir(&a.out)?;
    let mut w = csv::Writer::from_writer(create(&a.out.join("cutoffs.csv"))?);
    w.write_record(["lower", "upper", "state"])?;
    w.write_record(["0".to_string(), "0".to_string(), (c.zero_state + 1).to_string()])?;
    let mut lower = 0.0;
    for (i, &h) in c.interval_states.iter().enumerate() {
        let upper = c.boundaries.get(i).copied().unwrap_or(f64::INFINITY);
        w.write_record([lower.to_string(), upper.to_string(), (h + 1).to_string()])?;
        lower = upper;
    }
    w.flush()?;

    let shares = mean_time_per_state(&params)?;
    let mut w = csv::Writer::from_writer(create(&a.out.join("mean_time.csv"))?);
    let mut header = vec!["class".to_string()];
    header.extend((1..=params.m()).map(|h| format!("state_{h}")));
    w.write_record(&header)?;
    for (k, row) in shares.iter().enumerate() {
        let mut rec = vec![(k + 1).to_string()];
        rec.extend(row.iter().map(|v| v.to_string()));
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

pub fn misclassification(a: &MisclassificationArgs) -> Result<()> {
    let mut w = csv::Writer::from_writer(create(&a.out)?);
    w.write_record(["case", "T", "median", "q05", "q95", "error_rate"])?;
    for &case in &a.case {
        eprintln!("{case}: {} lengths x {} replicates", a.t_grid.len(), a.replicates);
        let rows = misclassification_experiment(&case.params(), &a.t_grid, a.replicates, a.seed)?;
        for r in rows {
            w.write_record([
                case.to_string(),
                r.t_len.to_string(),
                r.median.to_string(),
                r.q05.to_string(),
                r.q95.to_string(),
                r.error_rate.to_string(),
            ])?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn convergence(a: &ConvergenceArgs) -> Result<()> {
    let truth = Case::params(a.case);
    let mut cells = Vec::new();
    for &n in &a.n {
        for &t in &a.t_len {
            for &miss in &a.missingness {
                cells.push((n, t, miss));
            }
        }
    }
    let config = a.em.config();
    eprintln!("{} cells x {} replicates", cells.len(), a.replicates);
    let res = convergence_experiment(&truth, &cells, a.replicates, &config, config.seed)?;
    let mut w = create(&a.out)?;
    write_convergence_csv(&res, &mut w)?;
    w.flush()?;
    Ok(())
}
