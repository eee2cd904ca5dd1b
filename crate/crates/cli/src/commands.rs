use std::fmt::Write as _;
use std::path::Path;

use arbands::ar_model::{simulate as simulate_path, ArModel, InnovationLaw, TimeSeries};
use arbands::bands::{
    confidence_band, max_statistics, order_test_from, ConfidenceBand, QuantileMode,
};
use arbands::estimation::{
    inverse_diagonal, levinson_durbin, sample_autocovariance, InverseDiagonal, SequentialFits,
};
use arbands::harness::{
    emit_table, merge_reports, run_experiment_with_workers, workers_from_env, DnRule,
    ExperimentConfig, ExperimentReport, TableFormat, ThresholdSchedule,
};
use arbands::selection::{
    modified_select, q_hat_1, q_hat_2, q_hat_3, q_hat_5_from_fits, select as select_criterion,
    z_from_threshold_with, CriterionSpec, SelectionResult, SequentialConstants,
};
use arbands::BnVariant;
use serde::Serialize;

use crate::input::{format_series, read_series_csv, CliError};
use crate::{
    BandsArgs, ExperimentArgs, FitArgs, Format, Innovation, Mode, SelectArgs, SeriesArgs,
    SimulateArgs, TestOrderArgs,
};

/// Fixed precision for small and moderate magnitudes, scientific otherwise.
fn num(x: f64) -> String {
    if x == 0.0 || (1e-3..1e6).contains(&x.abs()) {
        format!("{x:.6}")
    } else {
        format!("{x:.6e}")
    }
}

fn write_output(path: Option<&Path>, text: &str) -> Result<(), CliError> {
    match path {
        Some(p) => std::fs::write(p, text).map_err(|e| CliError::io(p, e)),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn print_json<T: Serialize>(value: &T) {
    println!(
        "{}",
        serde_json::to_string_pretty(value).expect("output serialises")
    );
}

pub fn simulate(a: &SimulateArgs) -> Result<(), CliError> {
    if let Some(order) = a.order {
        if order != a.theta.len() {
            return Err(CliError::Usage(format!(
                "--order {order} does not match {} coefficients in --theta",
                a.theta.len()
            )));
        }
    }
    if a.n == 0 {
        return Err(CliError::Usage("--n must be at least 1".into()));
    }
    let law = match a.innovation {
        Innovation::Gaussian => InnovationLaw::Gaussian,
        Innovation::StudentT => InnovationLaw::StudentT { df: a.df },
        Innovation::Uniform => InnovationLaw::Uniform,
    };
    let model = ArModel::new(a.theta.clone(), a.sigma2, law)?;
    let series = simulate_path(&model, a.n, a.burn_in, a.seed)?;
    write_output(a.out.as_deref(), &format_series(&series))
}

struct Loaded {
    series: TimeSeries,
    d_n: usize,
    variant: BnVariant,
}

fn load(args: &SeriesArgs) -> Result<Loaded, CliError> {
    let series = read_series_csv(&args.input, args.center)?;
    let d_n = args
        .dn
        .unwrap_or_else(|| DnRule::CeilCLogN { c: 2.0 }.d_n(series.len()));
    if d_n < 2 {
        return Err(CliError::Usage(format!(
            "--dn must be at least 2, got {d_n}"
        )));
    }
    Ok(Loaded {
        series,
        d_n,
        variant: args.bn_variant.into(),
    })
}

fn fits_for(l: &Loaded, keep_full: bool) -> Result<(SequentialFits, InverseDiagonal), CliError> {
    let acv = sample_autocovariance(&l.series, l.d_n)?;
    let fits = levinson_durbin(&acv, l.d_n)?;
    let inv = inverse_diagonal(&acv, l.d_n, keep_full)?;
    Ok((fits, inv))
}

#[derive(Serialize)]
struct OrderRow {
    order: usize,
    sigma2_hat: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    reflection: Option<f64>,
}

#[derive(Serialize)]
struct FitReport {
    n: usize,
    d_n: usize,
    phi0: f64,
    orders: Vec<OrderRow>,
    coeffs: Vec<f64>,
    inverse_diagonal: Vec<f64>,
    normalized: Vec<f64>,
}

pub fn fit(a: &FitArgs, json: bool) -> Result<(), CliError> {
    let l = load(&a.series)?;
    let (fits, inv) = fits_for(&l, false)?;
    let stats = max_statistics(&fits, &inv, l.series.len(), l.variant)?;
    let report = FitReport {
        n: l.series.len(),
        d_n: l.d_n,
        phi0: fits.phi0,
        orders: fits
            .fits
            .iter()
            .map(|f| OrderRow {
                order: f.order,
                sigma2_hat: f.sigma2_hat,
                reflection: f.reflection.last().copied(),
            })
            .collect(),
        coeffs: fits.last().coeffs.clone(),
        inverse_diagonal: inv.diag.clone(),
        normalized: stats.values,
    };
    if json {
        print_json(&report);
        return Ok(());
    }
    let mut s = String::new();
    let _ = writeln!(
        s,
        "n = {}, d_n = {}, phi0 = {}",
        report.n,
        report.d_n,
        num(report.phi0)
    );
    let _ = writeln!(
        s,
        "\n{:>5}  {:>14}  {:>14}",
        "order", "sigma2_hat", "reflection"
    );
    for r in &report.orders {
        let k = r.reflection.map_or_else(|| "-".to_string(), num);
        let _ = writeln!(s, "{:>5}  {:>14}  {:>14}", r.order, num(r.sigma2_hat), k);
    }
    let _ = writeln!(
        s,
        "\n{:>5}  {:>14}  {:>14}  {:>14}",
        "lag", "coefficient", "inverse_diag", "normalized"
    );
    for i in 0..report.d_n {
        let _ = writeln!(
            s,
            "{:>5}  {:>14}  {:>14}  {:>14}",
            i + 1,
            num(report.coeffs[i]),
            num(report.inverse_diagonal[i]),
            num(report.normalized[i])
        );
    }
    print!("{s}");
    Ok(())
}

#[derive(Serialize)]
struct SelectReport {
    n: usize,
    d_n: usize,
    threshold_x: f64,
    threshold_y: f64,
    z_x: f64,
    z_y: f64,
    results: Vec<SelectionResult>,
}

fn renamed(mut r: SelectionResult, name: &str) -> SelectionResult {
    r.name = name.to_string();
    r
}

pub fn select(a: &SelectArgs, json: bool) -> Result<(), CliError> {
    let l = load(&a.series)?;
    let n = l.series.len();
    let (ref_x, ref_y) = ThresholdSchedule::Reference.thresholds(n);
    let t_y = a.threshold.unwrap_or(ref_y);
    let t_x = a.threshold_x.unwrap_or(ref_x);
    let z_y = z_from_threshold_with(t_y, l.d_n, l.variant)?;
    let z_x = z_from_threshold_with(t_x, l.d_n, l.variant)?;
    let (fits, inv) = fits_for(&l, false)?;
    let stats = max_statistics(&fits, &inv, n, l.variant)?;
    let q5 = |z, name| -> Result<SelectionResult, CliError> {
        let r = q_hat_5_from_fits(&fits, n, z, l.variant, SequentialConstants::AtDn)?;
        Ok(renamed(r, name))
    };
    let q5_y = q5(z_y, "q5_y")?;
    let q5_x = q5(z_x, "q5_x")?;
    let mut results = Vec::new();
    for spec in [
        CriterionSpec::Aic,
        CriterionSpec::BicSic,
        CriterionSpec::Hqc { c: a.hqc_c },
        CriterionSpec::Mic,
    ] {
        let base = select_criterion(&fits, spec, n)?;
        let star = modified_select(&base, &q5_y);
        results.push(base);
        results.push(star);
    }
    results.push(q5_y);
    results.push(q5_x);
    results.push(renamed(q_hat_1(&stats, z_y), "q1_y"));
    results.push(renamed(q_hat_1(&stats, z_x), "q1_x"));
    results.push(renamed(q_hat_2(&stats, z_y), "q2_y"));
    results.push(renamed(q_hat_3(&stats, z_y), "q3_y"));
    let report = SelectReport {
        n,
        d_n: l.d_n,
        threshold_x: t_x,
        threshold_y: t_y,
        z_x,
        z_y,
        results,
    };
    if json {
        print_json(&report);
        return Ok(());
    }
    let mut s = String::new();
    let _ = writeln!(
        s,
        "n = {}, d_n = {}, threshold x = {} (z = {}), threshold y = {} (z = {})\n",
        n,
        l.d_n,
        num(t_x),
        num(z_x),
        num(t_y),
        num(z_y)
    );
    let _ = writeln!(s, "{:<10}  {:>6}", "estimator", "order");
    for r in &report.results {
        let _ = writeln!(s, "{:<10}  {:>6}", r.name, r.chosen);
        for w in &r.warnings {
            let _ = writeln!(s, "  warning: {w}");
        }
    }
    print!("{s}");
    Ok(())
}

#[derive(Serialize)]
struct BandReport {
    n: usize,
    d_n: usize,
    lower: Vec<f64>,
    upper: Vec<f64>,
    #[serde(flatten)]
    band: ConfidenceBand,
}

pub fn bands(a: &BandsArgs, json: bool) -> Result<(), CliError> {
    if !(a.level > 0.0 && a.level < 1.0) {
        return Err(CliError::Usage(format!(
            "--level must lie in (0, 1), got {}",
            a.level
        )));
    }
    let l = load(&a.series)?;
    let mode = match a.mode {
        Mode::Gumbel => QuantileMode::Gumbel,
        Mode::IidExact => QuantileMode::IidExact,
        Mode::McCorrelated => QuantileMode::McCorrelated {
            samples: a.mc_samples,
            seed: a.seed,
        },
    };
    let (fits, inv) = fits_for(&l, matches!(a.mode, Mode::McCorrelated))?;
    let n = l.series.len();
    let band = confidence_band(&fits, &inv, n, a.level, mode, l.variant)?;
    let report = BandReport {
        n,
        d_n: l.d_n,
        lower: band.lower(),
        upper: band.upper(),
        band,
    };
    if json {
        print_json(&report);
        return Ok(());
    }
    let b = &report.band;
    let mut s = String::new();
    let _ = writeln!(
        s,
        "n = {}, d_n = {}, level = {}, mode = {}, critical value = {} (gumbel scale {})\n",
        n,
        l.d_n,
        num(b.level),
        b.mode.name(),
        num(b.critical),
        num(b.gumbel_scale)
    );
    let _ = writeln!(
        s,
        "{:>5}  {:>14}  {:>14}  {:>14}  {:>14}",
        "lag", "estimate", "lower", "upper", "half_width"
    );
    for i in 0..l.d_n {
        let _ = writeln!(
            s,
            "{:>5}  {:>14}  {:>14}  {:>14}  {:>14}",
            i + 1,
            num(b.centers[i]),
            num(report.lower[i]),
            num(report.upper[i]),
            num(b.half_widths[i])
        );
    }
    print!("{s}");
    Ok(())
}

pub fn test_order(a: &TestOrderArgs, json: bool) -> Result<(), CliError> {
    let l = load(&a.series)?;
    if a.k == 0 || a.q0 + a.k > l.d_n {
        return Err(CliError::Usage(format!(
            "need --k >= 1 and --q0 + --k <= d_n = {}",
            l.d_n
        )));
    }
    let (fits, inv) = fits_for(&l, false)?;
    let stats = max_statistics(&fits, &inv, l.series.len(), l.variant)?;
    let r = order_test_from(&stats, a.q0, a.k, a.alpha)?;
    if json {
        print_json(&r);
        return Ok(());
    }
    println!(
        "H0: q <= {} against q > {} (lags {}..{})",
        r.q0,
        r.q0,
        r.q0 + r.offset,
        r.d_n
    );
    println!("statistic = {}", num(r.statistic));
    println!(
        "threshold = {} (alpha = {})",
        num(r.threshold),
        num(a.alpha)
    );
    println!("reject = {}", r.reject);
    println!("p-value (asymptotic, Gumbel) = {}", num(r.p_value_gumbel));
    Ok(())
}

fn read_report(path: &Path) -> Result<ExperimentReport, CliError> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| CliError::Parse {
        line: e.line(),
        message: format!("{}: {e}", path.display()),
    })
}

pub fn experiment(a: &ExperimentArgs, json: bool) -> Result<(), CliError> {
    let format = match (
        a.format,
        a.out
            .as_deref()
            .and_then(|p| p.extension())
            .and_then(|e| e.to_str()),
    ) {
        (Some(Format::Csv), _) => TableFormat::Csv,
        (Some(Format::Markdown), _) => TableFormat::Markdown,
        (Some(Format::Json), _) => TableFormat::Json,
        (None, Some("json")) => TableFormat::Json,
        (None, Some("md")) => TableFormat::Markdown,
        (None, _) if json => TableFormat::Json,
        (None, _) => TableFormat::Csv,
    };
    let report = if a.merge.is_empty() {
        let mut config = match &a.config {
            Some(p) => {
                let text = std::fs::read_to_string(p).map_err(|e| CliError::io(p, e))?;
                ExperimentConfig::from_json(&text)?
            }
            None => ExperimentConfig::default(),
        };
        if let Some(r) = a.reps {
            config.repetitions = r;
        }
        if let Some(f) = a.first_rep {
            config.first_repetition = f;
        }
        if let Some(s) = a.seed {
            config.master_seed = s;
        }
        run_experiment_with_workers(&config, workers_from_env())?
    } else {
        let mut reports = a.merge.iter().map(|p| read_report(p));
        let first = reports.next().expect("clap requires one path")?;
        reports.try_fold(first, |acc, r| Ok::<_, CliError>(merge_reports(&acc, &r?)?))?
    };
    write_output(a.out.as_deref(), &emit_table(&report, format))
}
