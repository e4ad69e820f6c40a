use crate::config::{PriorSection, RunConfig};
use crate::EXIT_VALIDATION;
use serde::Serialize;
use serde_json::json;
use std::fs;
use std::path::Path;
use std::time::Instant;
use wmprior::io::{
    matrix_to_csv, read_fields, read_labels, read_mask, write_bands_png, write_heatmap_png, write_png,
};
use wmprior::matern::{practical_range, MaternFit};
use wmprior::metrics::{describe, StatisticsTable};
use wmprior::semivariogram::{
    estimate_anisotropy, fit_anisotropic_lengths, fit_matern_semivariogram, semivariogram, write_semivariogram_csv,
    AnisotropyResult, EmpiricalSemivariogram,
};
use wmprior::solver::{run_pipeline, ForwardModel, PriorKind, SolveReport};
use wmprior::spde::{extension_factor, sample_prior, validate_connection as connection, PrecisionSpec};
use wmprior::{AnisotropyEstimate, Error, Field, Grid2D, Result};

#[derive(Default, Serialize)]
struct Timings(Vec<(String, f64)>);

impl Timings {
    fn time<T>(&mut self, name: &str, f: impl FnOnce() -> Result<T>) -> Result<T> {
        let t = Instant::now();
        let v = f()?;
        self.0.push((name.to_string(), t.elapsed().as_secs_f64()));
        Ok(v)
    }

    fn write(&self, out: &Path) -> Result<()> {
        let map: serde_json::Map<String, serde_json::Value> =
            self.0.iter().map(|(k, v)| (k.clone(), json!(v))).collect();
        write_json(&out.join("timings.json"), &map)
    }
}

fn write_json<T: Serialize + ?Sized>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| Error::Parse(e.to_string()))?;
    text.push('\n');
    fs::write(path, text)?;
    Ok(())
}

fn major_length(p: &PriorSection) -> f64 {
    p.ell2.map_or(p.ell, |e2| p.ell.max(e2))
}

fn prior_spec(p: &PriorSection, n: usize) -> Result<PrecisionSpec> {
    let extension = match p.extension {
        Some(a) => a,
        None => extension_factor(p.nu, major_length(p), p.boundary)?,
    };
    let grid = Grid2D::new(n, extension)?;
    match p.ell2 {
        None => PrecisionSpec::isotropic(p.nu, p.ell, p.boundary, grid),
        Some(ell2) => PrecisionSpec::anisotropic(p.nu, p.theta_deg.to_radians(), p.ell, ell2, p.boundary, grid),
    }
}

pub fn validate_connection(cfg: &RunConfig, out: &Path) -> Result<u8> {
    let c = &cfg.connection;
    if c.samples < 2 {
        return Err(Error::InvalidInput("need at least 2 samples".into()));
    }
    let mut timings = Timings::default();
    let spec = prior_spec(&cfg.prior, c.n)?;
    let report = timings.time("validate", || connection(&spec, c.samples, cfg.seed))?;
    let passed = report.relative_error < c.threshold;
    write_json(
        &out.join("connection.json"),
        &json!({
            "spec": spec,
            "samples": c.samples,
            "seed": cfg.seed,
            "relative_error": report.relative_error,
            "threshold": c.threshold,
            "passed": passed,
        }),
    )?;
    let n = report.n;
    let (emp, mat) = report.correlation_maps(report.center_pixel());
    let diff: Vec<f64> = emp.iter().zip(&mat).map(|(a, b)| (a - b).abs()).collect();
    let dmax = diff.iter().cloned().fold(0.0, f64::max);
    write_heatmap_png(&out.join("empirical.png"), &emp, n, n, 0.0, 1.0)?;
    write_heatmap_png(&out.join("matern.png"), &mat, n, n, 0.0, 1.0)?;
    write_heatmap_png(&out.join("difference.png"), &diff, n, n, 0.0, dmax)?;
    fs::write(out.join("empirical.csv"), matrix_to_csv(&emp, n))?;
    fs::write(out.join("matern.csv"), matrix_to_csv(&mat, n))?;
    timings.write(out)?;
    println!(
        "relative Frobenius error {:.5} (threshold {}): {}",
        report.relative_error,
        c.threshold,
        if passed { "pass" } else { "fail" }
    );
    Ok(if passed { 0 } else { EXIT_VALIDATION })
}

fn suffix(band: &Field, bands: usize) -> String {
    match (&band.band, bands) {
        (Some(b), k) if k > 1 => format!("_{b}"),
        _ => String::new(),
    }
}

#[derive(Serialize)]
struct BandFit {
    band: Option<String>,
    fit: MaternFit,
    practical_range: f64,
    anisotropy: Option<DirectionalFit>,
}

#[derive(Serialize)]
struct DirectionalFit {
    theta_deg: f64,
    tau: f64,
    anisotropic: bool,
    ell1: f64,
    ell2: f64,
    fit: MaternFit,
    crossings: Vec<(f64, f64)>,
    gamma_crit: f64,
}

fn directional_fit(field: &Field, cfg: &RunConfig, est: &AnisotropyResult) -> Result<DirectionalFit> {
    let direction = if est.anisotropic {
        est.estimate
    } else {
        AnisotropyEstimate::from_ratio(0.0, 1.0)?
    };
    let v = &cfg.pipeline.variogram;
    let (fit, geo) = fit_anisotropic_lengths(field, &v.semivariogram, &direction, &v.nu_candidates)?;
    Ok(DirectionalFit {
        theta_deg: geo.theta.to_degrees(),
        tau: geo.tau,
        anisotropic: est.anisotropic,
        ell1: geo.ell1,
        ell2: geo.ell2,
        fit,
        crossings: est
            .profile
            .records
            .iter()
            .map(|r| (r.psi.to_degrees(), r.range_at_crit))
            .collect(),
        gamma_crit: est.profile.gamma_crit,
    })
}

pub fn fit(cfg: &RunConfig, out: &Path) -> Result<u8> {
    let input = cfg
        .fit
        .input
        .as_ref()
        .ok_or_else(|| Error::InvalidInput("fit needs an input image or CSV".into()))?;
    let mut timings = Timings::default();
    let fields = read_fields(input)?;
    let v = &cfg.pipeline.variogram;
    let mut results = Vec::new();
    for field in &fields {
        let sfx = suffix(field, fields.len());
        let sv = timings.time(&format!("semivariogram{sfx}"), || semivariogram(field, &v.semivariogram))?;
        let fit = timings.time(&format!("fit{sfx}"), || fit_matern_semivariogram(&sv, &v.nu_candidates))?;
        let mut curves: Vec<EmpiricalSemivariogram> = vec![sv.clone()];
        let anisotropy = if cfg.fit.directional {
            let est = timings.time(&format!("directional{sfx}"), || estimate_anisotropy(field, v))?;
            curves.extend(est.profile.semivariograms.iter().cloned());
            Some(directional_fit(field, cfg, &est)?)
        } else {
            None
        };
        let mut csv = Vec::new();
        write_semivariogram_csv(&mut csv, &curves)?;
        fs::write(out.join(format!("semivariogram{sfx}.csv")), csv)?;
        let mut model = String::from("lag,gamma_model\n");
        let m = 200;
        for i in 0..=m {
            let r = v.semivariogram.max_lag * i as f64 / m as f64;
            model.push_str(&format!("{r},{}\n", fit.semivariance(r)));
        }
        fs::write(out.join(format!("model{sfx}.csv")), model)?;
        println!(
            "{}nu = {}, ell = {:.5}, nugget = {:.4e}, sill = {:.4e}",
            field.band.as_ref().map(|b| format!("[{b}] ")).unwrap_or_default(),
            fit.nu,
            fit.ell,
            fit.nugget,
            fit.sill
        );
        if let Some(a) = &anisotropy {
            println!("    theta = {:.1} deg, tau = {:.3}, ell1 = {:.5}, ell2 = {:.5}", a.theta_deg, a.tau, a.ell1, a.ell2);
        }
        results.push(BandFit {
            band: field.band.clone(),
            practical_range: practical_range(fit.nu, fit.ell)?,
            fit,
            anisotropy,
        });
    }
    write_json(&out.join("fit.json"), &json!({ "bands": results }))?;
    timings.write(out)?;
    Ok(0)
}

fn check_dims(what: &str, nx: usize, ny: usize, field: &Field) -> Result<()> {
    if (nx, ny) != (field.nx(), field.ny()) {
        return Err(Error::InvalidInput(format!(
            "{what} is {nx}x{ny} but the input is {}x{}",
            field.nx(),
            field.ny()
        )));
    }
    Ok(())
}

fn prior_label(kind: PriorKind) -> &'static str {
    match kind {
        PriorKind::Isotropic => "Isotropic",
        PriorKind::Anisotropic => "Anisotropic",
        PriorKind::Regional => "Regional",
        PriorKind::Tikhonov => "Tikhonov",
    }
}

#[derive(Serialize)]
struct BandReport<'a> {
    band: Option<String>,
    report: &'a SolveReport,
}

pub fn solve(cfg: &RunConfig, out: &Path) -> Result<u8> {
    let s = &cfg.solve;
    let input = s
        .input
        .as_ref()
        .ok_or_else(|| Error::InvalidInput("solve needs an input image or CSV".into()))?;
    if s.prior == PriorKind::Regional && s.regions.is_none() {
        return Err(Error::InvalidInput("the regional prior needs --regions".into()));
    }
    let mut timings = Timings::default();
    let mut fields = read_fields(input)?;
    let (nx, ny) = (fields[0].nx(), fields[0].ny());
    if nx != ny {
        return Err(Error::InvalidInput(format!("input must be square, got {nx}x{ny}")));
    }
    if let Some(m) = &s.mask {
        let (mx, my, mask) = read_mask(m)?;
        check_dims("mask", mx, my, &fields[0])?;
        for f in fields.iter_mut() {
            *f = f.clone().with_mask(mask.clone())?;
        }
    }
    let truth = match &s.truth {
        Some(t) => {
            let tf = read_fields(t)?;
            if tf.len() != fields.len() {
                return Err(Error::InvalidInput(format!(
                    "truth has {} bands, input has {}",
                    tf.len(),
                    fields.len()
                )));
            }
            check_dims("truth", tf[0].nx(), tf[0].ny(), &fields[0])?;
            Some(tf)
        }
        None => None,
    };
    let labels = match &s.regions {
        Some(r) => {
            let (lx, ly, labels) = read_labels(r)?;
            check_dims("region labels", lx, ly, &fields[0])?;
            Some(labels)
        }
        None => None,
    };
    let grid = Grid2D::new(nx, s.extension)?;
    let model = ForwardModel::new(grid, fields[0].mask().to_vec(), s.blur)?;
    let mut reports = Vec::new();
    for (k, field) in fields.iter().enumerate() {
        let sfx = suffix(field, fields.len());
        let t = truth.as_ref().map(|t| &t[k]);
        let r = timings.time(&format!("solve{sfx}"), || {
            run_pipeline(s.prior, field, &model, labels.as_deref(), t, &cfg.pipeline)
        })?;
        fs::write(out.join(format!("estimate{sfx}.csv")), matrix_to_csv(r.estimate.values(), nx))?;
        println!(
            "{}{:?}: alpha = {:.4e}, iterations = {}, converged = {}{}",
            field.band.as_ref().map(|b| format!("[{b}] ")).unwrap_or_default(),
            s.prior,
            r.alpha,
            r.iterations,
            r.converged,
            r.metrics
                .and_then(|m| m.correlation)
                .map(|c| format!(", rho = {c:.4}"))
                .unwrap_or_default()
        );
        for w in &r.warnings {
            eprintln!("warning: {w}");
        }
        reports.push(r);
    }
    let bands: Vec<&[f64]> = reports.iter().map(|r| r.estimate.values()).collect();
    write_bands_png(&out.join("reconstruction.png"), &bands, nx, ny, s.bits)?;
    let band_reports: Vec<BandReport> = fields
        .iter()
        .zip(&reports)
        .map(|(f, r)| BandReport {
            band: f.band.clone(),
            report: r,
        })
        .collect();
    write_json(&out.join("report.json"), &json!({ "prior": s.prior, "bands": band_reports }))?;
    if let Some(tf) = &truth {
        let mut table = StatisticsTable::default();
        for ((f, r), t) in fields.iter().zip(&reports).zip(tf) {
            let tag = f
                .band
                .as_ref()
                .filter(|_| fields.len() > 1)
                .map(|b| format!(" ({b})"))
                .unwrap_or_default();
            table.push(format!("True Image{tag}"), describe(t.values())?);
            if let Some(m) = r.metrics {
                table.push(format!("{}{tag}", prior_label(s.prior)), m);
            }
        }
        fs::write(out.join("statistics.csv"), table.to_csv())?;
        fs::write(out.join("statistics.txt"), table.to_text())?;
    }
    timings.write(out)?;
    Ok(0)
}

pub fn sample(cfg: &RunConfig, out: &Path) -> Result<u8> {
    let c = &cfg.sample;
    let mut timings = Timings::default();
    let spec = prior_spec(&cfg.prior, c.n)?;
    let draws = timings.time("sample", || sample_prior(&spec, c.count, cfg.seed))?;
    let n = spec.grid.n();
    for (k, x) in draws.iter().enumerate() {
        let v = spec.grid.restrict(x);
        fs::write(out.join(format!("sample_{k:03}.csv")), matrix_to_csv(&v, n))?;
        let lo = v.iter().cloned().fold(f64::INFINITY, f64::min);
        let hi = v.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let span = if hi > lo { hi - lo } else { 1.0 };
        let scaled: Vec<f64> = v.iter().map(|x| (x - lo) / span).collect();
        write_png(&out.join(format!("sample_{k:03}.png")), &scaled, n, n, 16)?;
    }
    write_json(
        &out.join("samples.json"),
        &json!({ "spec": spec, "seed": cfg.seed, "count": c.count }),
    )?;
    timings.write(out)?;
    println!("wrote {} sample(s) of size {n}x{n}", draws.len());
    Ok(0)
}
