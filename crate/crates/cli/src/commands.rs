//! Subcommand implementations.

use std::fmt::Write as _;
use std::time::Instant;

use log::info;
use specgp::quadrature::REFERENCE_L2_ERRORS;
use specgp::{
    build_rule, l2_kernel_error, reference_l2_error, validate_rule, BuildOptions, Dataset,
    MaternParams, QuadratureRule, RegressionFit, SumStrategy, ValidationGrid,
};
use specgp::regression::SpectralSums;

use crate::data::{self, load_rule, params, parse_box, parse_floats, parse_sizes};
use crate::{usage, BenchArgs, BuildArgs, CliError, CliResult, ExportArgs, FitArgs, RegressArgs, ValidateArgs};

fn check_sigma2(sigma2: f64) -> CliResult<()> {
    if sigma2 > 0.0 && sigma2.is_finite() {
        Ok(())
    } else {
        usage(format!("--sigma2 must be positive, got {sigma2}"))
    }
}

fn strategy(force_fast: bool) -> SumStrategy {
    if force_fast {
        SumStrategy::Fast
    } else {
        SumStrategy::Auto
    }
}

pub fn build(a: &BuildArgs) -> CliResult<()> {
    let hb = parse_box(&a.hyper_box)?;
    if a.p < 2 || a.n < 2 {
        return usage("--p and --n must be at least 2");
    }
    let opts = BuildOptions {
        p: a.p,
        n: a.n,
        seed: a.seed,
        loose: a.loose,
        refine: !a.no_refine,
        require_certificate: !a.uncertified,
        ..BuildOptions::default()
    };
    let (rule, rep) = build_rule(&hb, a.eps, &opts)?;
    rule.save(&a.out)?;

    let v = &rep.validation;
    let mut s = String::new();
    writeln!(s, "nodes (m)            {}", rep.m).unwrap();
    writeln!(s, "candidates           {}", rep.candidates).unwrap();
    writeln!(s, "after nnls           {}", rep.nnls_nodes).unwrap();
    writeln!(s, "frequency cutoff     {:.6}", rep.xi_max).unwrap();
    writeln!(s, "panels               {}", rep.panels).unwrap();
    writeln!(s, "lag samples          {}", rep.lags).unwrap();
    writeln!(s, "sketch rows          {}", rep.sketch_rows).unwrap();
    writeln!(s, "exchange rounds      {}", rep.exchange_rounds).unwrap();
    writeln!(s, "family residual      {:.3e}", rep.family_residual).unwrap();
    writeln!(
        s,
        "max pointwise error  {:.3e} at d={:.4} nu={:.4} rho={:.4} ({} points)",
        v.max_error, v.at_lag, v.at_nu, v.at_rho, v.points
    )
    .unwrap();
    writeln!(s, "certified            {}", rep.certified).unwrap();
    for (stage, secs) in &rep.timings {
        writeln!(s, "time {stage:<16}{secs:.2} s").unwrap();
    }
    print!("{s}");
    let report = a.out.with_extension("report.txt");
    std::fs::write(&report, s)?;
    Ok(())
}

/// Table rows: the published cells when the rule covers them, otherwise a
/// 5 × 3 grid over its box.
fn table_cells(rule: &QuadratureRule) -> Vec<(f64, f64)> {
    let hb = rule.hyper_box();
    let published: Vec<(f64, f64)> = REFERENCE_L2_ERRORS.iter().map(|t| (t.0, t.1)).collect();
    let covered = published
        .iter()
        .all(|&(nu, rho)| MaternParams::new(nu, rho).is_ok_and(|p| hb.contains(&p)));
    if covered {
        return published;
    }
    let lin = |lo: f64, hi: f64, k: usize, n: usize| lo + (hi - lo) * k as f64 / (n - 1) as f64;
    let mut cells = Vec::new();
    for i in 0..5 {
        for j in 0..3 {
            cells.push((lin(hb.nu_lo, hb.nu_hi, i, 5), lin(hb.rho_lo, hb.rho_hi, j, 3)));
        }
    }
    cells
}

pub fn validate(a: &ValidateArgs) -> CliResult<()> {
    let rule = load_rule(&a.rule)?;
    let g = parse_floats(&a.grid, "--grid")?;
    if g.len() != 3 || g.iter().any(|&v| v < 1.0 || v.fract() != 0.0) {
        return usage("--grid needs three positive integers \"lags,nus,rhos\"");
    }
    let grid = ValidationGrid::new(g[0] as usize, g[1] as usize, g[2] as usize);
    let cells = match (a.nu, a.rho) {
        (Some(nu), Some(rho)) => vec![(nu, rho)],
        _ => table_cells(&rule),
    };
    let embedded = rule == QuadratureRule::embedded();

    println!("{:>6} {:>6} {:>12} {:>12}", "nu", "rho", "L2 error", "published");
    for (nu, rho) in cells {
        let e = l2_kernel_error(&rule, &params(nu, rho)?)?;
        let reference = if embedded { reference_l2_error(nu, rho) } else { None };
        let pub_col = reference.map_or_else(|| "-".to_string(), |r| format!("{r:.3e}"));
        println!("{nu:>6.2} {rho:>6.2} {e:>12.3e} {pub_col:>12}");
    }
    let v = validate_rule(&rule, rule.hyper_box(), grid);
    println!(
        "max pointwise error {:.3e} at d={:.4} nu={:.4} rho={:.4} over {} points",
        v.max_error, v.at_lag, v.at_nu, v.at_rho, v.points
    );
    Ok(())
}

struct Timed {
    fit: RegressionFit,
    fft_seconds: f64,
    solve_seconds: f64,
    total_seconds: f64,
}

fn timed_fit(
    rule: &QuadratureRule,
    p: &MaternParams,
    data: &Dataset,
    sigma2: f64,
    strategy: SumStrategy,
) -> CliResult<Timed> {
    rule.hyper_box().check(p)?;
    let start = Instant::now();
    let sums = SpectralSums::compute(rule, data, strategy)?;
    let t_sums = start.elapsed().as_secs_f64();
    let fit = sums.fit(rule, p, sigma2)?;
    let total = start.elapsed().as_secs_f64();
    Ok(Timed {
        fit,
        fft_seconds: t_sums,
        solve_seconds: total - t_sums,
        total_seconds: total,
    })
}

fn eval_grid(rule: &QuadratureRule, n: usize) -> Vec<f64> {
    let hb = rule.hyper_box();
    if n == 1 {
        return vec![0.5 * (hb.a + hb.b)];
    }
    (0..n).map(|i| hb.a + (hb.b - hb.a) * i as f64 / (n - 1) as f64).collect()
}

pub fn regress(a: &RegressArgs) -> CliResult<()> {
    check_sigma2(a.sigma2)?;
    let rule = load_rule(&a.rule)?;
    let p = params(a.nu, a.rho)?;
    rule.hyper_box().check(&p)?;
    if a.grid == 0 {
        return usage("--grid must be positive");
    }
    let data = data::dataset(&a.data, a.sigma2)?;
    if let Some(x) = data.xs().iter().find(|&&x| !rule.hyper_box().contains_x(x)) {
        return usage(format!("data location {x} outside the rule interval"));
    }
    let t = timed_fit(&rule, &p, &data, a.sigma2, strategy(a.force_fast_path))?;
    let xs = eval_grid(&rule, a.grid);
    let pred = t.fit.predict(&xs);
    if pred.iter().any(|(m, v)| !m.is_finite() || !v.is_finite()) {
        return Err(CliError::Lib(specgp::Error::Numerical("non-finite prediction".into())));
    }
    if let Some(out) = &a.out {
        let rows: Vec<Vec<f64>> = xs.iter().zip(&pred).map(|(&x, &(m, v))| vec![x, m, v]).collect();
        data::write_columns(out, &["x", "mean", "variance"], &rows)?;
    }

    let l2 = if rule == QuadratureRule::embedded() {
        reference_l2_error(a.nu, a.rho).map_or_else(|| "-".to_string(), |e| format!("{e:.3e}"))
    } else {
        "-".to_string()
    };
    println!(
        "{:>10} {:>5} {:>5} {:>7} {:>10} {:>13} {:>15} {:>15}",
        "N", "nu", "rho", "sigma2", "L2 error", "FFT time (s)", "solve time (s)", "total time (s)"
    );
    println!(
        "{:>10} {:>5.2} {:>5.2} {:>7.3} {:>10} {:>13.4} {:>15.4} {:>15.4}",
        data.len(),
        a.nu,
        a.rho,
        a.sigma2,
        l2,
        t.fft_seconds,
        t.solve_seconds,
        t.total_seconds
    );
    println!("log marginal likelihood {:.6}", t.fit.log_marginal_likelihood());
    Ok(())
}

/// Largest offset from the box walls kept by the ascent, so the analytic
/// gradient stays defined.
const WALL_MARGIN: f64 = 1e-6;

fn clip(v: f64, lo: f64, hi: f64) -> f64 {
    let m = WALL_MARGIN * (hi - lo);
    v.clamp(lo + m, hi - m)
}

pub fn fit(a: &FitArgs) -> CliResult<()> {
    check_sigma2(a.sigma2)?;
    let rule = load_rule(&a.rule)?;
    let hb = *rule.hyper_box();
    let init = params(a.nu, a.rho)?;
    if !hb.contains_strictly(&init) {
        return usage(format!(
            "initial (nu={}, rho={}) must lie strictly inside the rule box",
            a.nu, a.rho
        ));
    }
    let data = match &a.truth {
        Some(t) => {
            let v = parse_floats(t, "--truth")?;
            if v.len() != 3 {
                return usage("--truth needs \"nu,rho,sigma2\"");
            }
            check_sigma2(v[2])?;
            let truth = params(v[0], v[1])?;
            hb.check(&truth)?;
            data::prior_dataset(&a.data, &rule, &truth, v[2])?
        }
        None => data::dataset(&a.data, a.sigma2)?,
    };

    let start = Instant::now();
    let sums = SpectralSums::compute(&rule, &data, strategy(a.force_fast_path))?;
    info!("exponential sums computed once for N={} in {:.3}s", data.len(), start.elapsed().as_secs_f64());

    let evaluate = |nu: f64, rho: f64, s2: f64| -> CliResult<(f64, [f64; 3])> {
        let f = sums.fit(&rule, &MaternParams::new(nu, rho)?, s2)?;
        let l = f.log_marginal_likelihood();
        let g = f.gradient();
        if !l.is_finite() || !g.norm().is_finite() {
            return Err(CliError::Lib(specgp::Error::Numerical(format!(
                "likelihood diverged at nu={nu} rho={rho} sigma2={s2}"
            ))));
        }
        // gradient in log coordinates; fixed axes of a degenerate box drop out
        let gn = if hb.nu_hi > hb.nu_lo { nu * g.d_nu } else { 0.0 };
        let gr = if hb.rho_hi > hb.rho_lo { rho * g.d_rho } else { 0.0 };
        Ok((l, [gn, gr, s2 * g.d_sigma2]))
    };

    let mut theta = [a.nu, a.rho, a.sigma2];
    let (mut l, mut g) = evaluate(theta[0], theta[1], theta[2])?;
    let norm = |g: &[f64; 3]| g.iter().map(|v| v * v).sum::<f64>().sqrt();
    let mut rows = vec![vec![0.0, theta[0], theta[1], theta[2], l, norm(&g)]];
    println!("{:>5} {:>10} {:>10} {:>12} {:>16} {:>12}", "step", "nu", "rho", "sigma2", "log likelihood", "|grad|");
    println!(
        "{:>5} {:>10.6} {:>10.6} {:>12.6e} {:>16.6} {:>12.4e}",
        0, theta[0], theta[1], theta[2], l, norm(&g)
    );

    let mut step = 0.25;
    for k in 1..=a.steps {
        let gnorm = norm(&g);
        if gnorm < 1e-10 {
            break;
        }
        let mut accepted = None;
        for _ in 0..40 {
            let cand = [
                clip(theta[0] * (step * g[0] / gnorm).exp(), hb.nu_lo, hb.nu_hi),
                clip(theta[1] * (step * g[1] / gnorm).exp(), hb.rho_lo, hb.rho_hi),
                (theta[2] * (step * g[2] / gnorm).exp()).clamp(1e-10, 1e10),
            ];
            let (lc, gc) = evaluate(cand[0], cand[1], cand[2])?;
            if lc > l {
                accepted = Some((cand, lc, gc));
                break;
            }
            step *= 0.5;
        }
        let Some((cand, lc, gc)) = accepted else {
            info!("no ascent step found after {} steps; stopping", k - 1);
            break;
        };
        theta = cand;
        l = lc;
        g = gc;
        step = (2.0 * step).min(1.0);
        rows.push(vec![k as f64, theta[0], theta[1], theta[2], l, norm(&g)]);
        println!(
            "{:>5} {:>10.6} {:>10.6} {:>12.6e} {:>16.6} {:>12.4e}",
            k, theta[0], theta[1], theta[2], l, norm(&g)
        );
    }
    info!("total fit time {:.3}s", start.elapsed().as_secs_f64());
    if let Some(out) = &a.out {
        data::write_columns(out, &["step", "nu", "rho", "sigma2", "log_likelihood", "grad_norm"], &rows)?;
    }
    Ok(())
}

pub fn bench(a: &BenchArgs) -> CliResult<()> {
    check_sigma2(a.sigma2)?;
    let sizes = parse_sizes(&a.sizes)?;
    let rule = load_rule(&a.rule)?;
    let p = params(a.nu, a.rho)?;
    rule.hyper_box().check(&p)?;
    println!("{:>10} {:>13} {:>15} {:>15}", "N", "FFT time (s)", "solve time (s)", "total time (s)");
    let mut rows = Vec::new();
    for &n in &sizes {
        if n < 2 {
            return usage("--N entries must be at least 2");
        }
        let data = Dataset::synthetic(n, a.sigma2, a.seed)?;
        let t = timed_fit(&rule, &p, &data, a.sigma2, SumStrategy::Fast)?;
        println!("{:>10} {:>13.4} {:>15.4} {:>15.4}", n, t.fft_seconds, t.solve_seconds, t.total_seconds);
        rows.push(vec![n as f64, t.fft_seconds, t.solve_seconds, t.total_seconds]);
    }
    if rows.len() >= 2 {
        let total_ratio = rows.last().unwrap()[3] / rows[0][3];
        let solve: Vec<f64> = rows.iter().map(|r| r[2]).collect();
        let spread = solve.iter().copied().fold(0.0, f64::max) / solve.iter().copied().fold(f64::INFINITY, f64::min);
        println!("total time ratio (largest N / smallest N) {total_ratio:.2}");
        println!("solve time spread {spread:.2}x");
        if spread >= 3.0 {
            log::warn!("solve time varies by {spread:.2}x across N; expected N-independent");
        }
    }
    if let Some(out) = &a.out {
        data::write_columns(out, &["N", "fft_seconds", "solve_seconds", "total_seconds"], &rows)?;
    }
    Ok(())
}

pub fn export_embedded(a: &ExportArgs) -> CliResult<()> {
    data::write_text(a.out.as_deref(), &QuadratureRule::embedded().to_text())
}
