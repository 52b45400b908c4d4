use std::path::Path;

use fluidpert::bench::{self, CaseId, CaseResult, CellCheck, ErrorNorms};
use fluidpert::density::{density1_at, density_at, first_order_law, stationary_law, StationaryLaw};
use fluidpert::io::{fmt3, fmt_num, load_model, load_perturbation, matrix_csv, matrix_to_rows};
use fluidpert::numerics::{self, Matrix, RowVector};
use fluidpert::perturb::PsiExpansion;
use fluidpert::riccati::{psi_coefficients, DEFAULT_MAX_NEWTON};
use fluidpert::simulate::{estimate_density, estimate_psi, SimConfig};
use fluidpert::{
    expand, mean_drift, solve_psi, solve_psi_at, stationary_phase_dist, Error, FluidModel,
    NewtonOptions, Result, Side,
};
use serde_json::{json, Value};

use crate::manifest::{self, RunManifest, Timer};
use crate::{grid, Format};

fn newton(tol: f64) -> Result<NewtonOptions> {
    if tol.is_nan() || tol <= 0.0 {
        return Err(Error::Parse(format!("--tol must be positive, got {tol}")));
    }
    Ok(NewtonOptions {
        tol,
        max_newton: DEFAULT_MAX_NEWTON,
    })
}

fn side_labels(model: &FluidModel, side: Side) -> Vec<String> {
    model
        .indices(side)
        .iter()
        .map(|&k| model.label_of_canonical(k).to_string())
        .collect()
}

fn labels_of(model: &FluidModel, phases: &[usize]) -> Vec<String> {
    phases.iter().map(|&i| model.labels()[i].clone()).collect()
}

/// Writes `body` to `out` with a sidecar manifest, or prints it.
fn emit(body: &str, out: Option<&Path>, manifest: &RunManifest) -> Result<()> {
    match out {
        Some(path) => {
            manifest::write(path, body)?;
            manifest::write_json(&manifest::sidecar(path), manifest)
        }
        None => {
            print!("{body}");
            Ok(())
        }
    }
}

fn json_text(value: &Value) -> String {
    serde_json::to_string_pretty(value).expect("JSON values always serialize") + "\n"
}

pub fn validate(path: &Path, as_json: bool) -> Result<()> {
    let model = load_model(path)?;
    let xi = stationary_phase_dist(&model)?;
    let drift = mean_drift(&model)?;
    let sides = [Side::Plus, Side::Zero, Side::Minus].map(|s| side_labels(&model, s));
    if as_json {
        let report = json!({
            "valid": true,
            "phases": model.n(),
            "partition": { "plus": sides[0], "zero": sides[1], "minus": sides[2] },
            "labels": model.labels(),
            "xi": xi.iter().collect::<Vec<_>>(),
            "drift": drift,
            "recurrent": drift < 0.0,
        });
        print!("{}", json_text(&report));
        return Ok(());
    }
    println!("valid model with {} phases", model.n());
    for (name, s) in ["S+", "S0", "S-"].iter().zip(&sides) {
        println!("{name}: {}", s.join(" "));
    }
    println!(
        "xi: {}",
        xi.iter().map(|v| fmt_num(*v)).collect::<Vec<_>>().join(" ")
    );
    println!("drift: {}", fmt_num(drift));
    println!(
        "{}",
        if drift < 0.0 {
            "positive recurrent"
        } else {
            "not positive recurrent"
        }
    );
    Ok(())
}

pub fn psi(
    argv: &[String],
    path: &Path,
    tol: f64,
    out: Option<&Path>,
    format: Format,
) -> Result<()> {
    let timer = Timer::start();
    let model = load_model(path)?;
    let opts = newton(tol)?;
    let sol = solve_psi(&model, &opts)?;
    let rows = side_labels(&model, Side::Plus);
    let cols = side_labels(&model, Side::Minus);
    let f = psi_coefficients(&model)?.residual(&sol.psi);
    let row_res: Vec<f64> = f
        .row_iter()
        .map(|r| r.iter().map(|v| v.abs()).sum())
        .collect();
    let row_sums: Vec<f64> = sol.psi.row_iter().map(|r| r.sum()).collect();

    let diagnostics = json!({
        "iterations": sol.iterations,
        "residual": sol.residual,
        "history": sol.history,
        "polish": sol.polish,
        "k_stable": numerics::stable_spectrum(&sol.k).ok(),
    });
    let manifest = timer.manifest(
        "psi",
        argv,
        &[path],
        json!({ "tol": tol, "max_newton": opts.max_newton }),
        diagnostics.clone(),
    );

    if format.json {
        let body = json!({
            "rows": rows, "columns": cols,
            "psi": matrix_to_rows(&sol.psi), "u": matrix_to_rows(&sol.u), "k": matrix_to_rows(&sol.k),
            "row_sums": row_sums, "row_residuals": row_res,
            "diagnostics": diagnostics, "manifest": manifest,
        });
        return match out {
            Some(dir) => {
                manifest::ensure_dir(dir)?;
                manifest::write(&dir.join("psi.json"), &json_text(&body))
            }
            None => {
                print!("{}", json_text(&body));
                Ok(())
            }
        };
    }

    let mut psi_csv = fluidpert::io::csv_line(
        std::iter::once("phase".to_string())
            .chain(cols.iter().cloned())
            .chain(["row_sum".into(), "residual".into()]),
    );
    psi_csv.push('\n');
    for (i, label) in rows.iter().enumerate() {
        let mut fields = vec![label.clone()];
        fields.extend(sol.psi.row(i).iter().map(|v| fmt_num(*v)));
        fields.extend([fmt_num(row_sums[i]), fmt_num(row_res[i])]);
        psi_csv.push_str(&fluidpert::io::csv_line(fields));
        psi_csv.push('\n');
    }
    match out {
        Some(dir) => {
            manifest::ensure_dir(dir)?;
            manifest::write(&dir.join("psi.csv"), &psi_csv)?;
            manifest::write(&dir.join("u.csv"), &matrix_csv(&sol.u, &cols, &cols))?;
            manifest::write(&dir.join("k.csv"), &matrix_csv(&sol.k, &rows, &rows))?;
            manifest::write_json(&dir.join("manifest.json"), &manifest)
        }
        None => {
            print!("{psi_csv}");
            Ok(())
        }
    }
}

const SETS: [&str; 4] = ["plus", "oplus", "ominus", "minus"];

/// Row and column labels of an auxiliary block, read off the set names at
/// the end of its name (`k_m1_oplus_plus` is `S⊕ × S₊`).
fn aux_labels(name: &str, m: &Matrix, sets: &[Vec<String>; 4]) -> (Vec<String>, Vec<String>) {
    let tokens: Vec<&str> = name.split('_').collect();
    let set = |t: &str| SETS.iter().position(|s| *s == t);
    let pair = match tokens[..] {
        [.., a, b] => set(a).zip(set(b)),
        _ => None,
    };
    let (r, c) = match pair {
        Some((r, c)) => (sets[r].clone(), sets[c].clone()),
        // P blocks map S₊ to S₋.
        None => (sets[0].clone(), sets[3].clone()),
    };
    if r.len() == m.nrows() && c.len() == m.ncols() {
        (r, c)
    } else {
        (
            (0..m.nrows()).map(|i| i.to_string()).collect(),
            (0..m.ncols()).map(|j| j.to_string()).collect(),
        )
    }
}

fn norms_json(eps: f64, n: &ErrorNorms) -> Value {
    json!({ "eps": eps, "E_plus": n.e_plus, "E_oplus": n.e_oplus, "E_inf": n.e_inf, "E_minus": n.e_minus, "E_ominus": n.e_ominus })
}

fn opt3(v: Option<f64>) -> String {
    v.map_or_else(|| "-".into(), fmt3)
}

fn opt_num(v: Option<f64>) -> String {
    v.map(fmt_num).unwrap_or_default()
}

pub fn perturb(
    argv: &[String],
    model_path: &Path,
    pert_path: &Path,
    tol: f64,
    eps_check: &[f64],
    out: Option<&Path>,
    format: Format,
) -> Result<()> {
    let timer = Timer::start();
    let model = load_model(model_path)?;
    let spec = load_perturbation(pert_path, &model)?;
    let opts = newton(tol)?;
    let sol = solve_psi(&model, &opts)?;
    let exp: PsiExpansion = expand(&model, &sol, &spec)?;
    let rows = labels_of(&model, &exp.row_phases);
    let cols = labels_of(&model, &exp.col_phases);

    let mut checks = Vec::new();
    for &eps in eps_check {
        let (pm, ps) = solve_psi_at(&model, &spec, eps, &opts)?;
        checks.push((eps, bench::error_norms(&pm, &ps.psi, &exp, eps)?));
    }

    let sets = {
        let (p, op) = exp.row_phases.split_at(exp.n_plus);
        let (om, m) = exp.col_phases.split_at(exp.n_ominus);
        [
            labels_of(&model, p),
            labels_of(&model, op),
            labels_of(&model, om),
            labels_of(&model, m),
        ]
    };
    let aux_names: Vec<&String> = exp.aux.keys().collect();
    let diagnostics = json!({
        "regime": exp.regime.as_str(),
        "iterations": sol.iterations,
        "residual": sol.residual,
        "aux_blocks": aux_names,
        "sizes": { "plus": exp.n_plus, "oplus": exp.n_oplus, "ominus": exp.n_ominus, "minus": exp.n_minus },
        "eps_check": checks.iter().map(|(e, n)| norms_json(*e, n)).collect::<Vec<_>>(),
    });
    let manifest = timer.manifest(
        "perturb",
        argv,
        &[model_path, pert_path],
        json!({ "tol": tol, "eps_check": eps_check }),
        diagnostics.clone(),
    );

    if format.json {
        let aux: serde_json::Map<String, Value> = exp
            .aux
            .iter()
            .map(|(k, m)| (k.clone(), json!(matrix_to_rows(m))))
            .collect();
        let body = json!({
            "rows": rows, "columns": cols,
            "psi_bar": matrix_to_rows(&exp.psi_bar), "psi1": matrix_to_rows(&exp.psi1),
            "aux": aux, "diagnostics": diagnostics, "manifest": manifest,
        });
        return match out {
            Some(dir) => {
                manifest::ensure_dir(dir)?;
                manifest::write(&dir.join("perturb.json"), &json_text(&body))
            }
            None => {
                print!("{}", json_text(&body));
                Ok(())
            }
        };
    }

    if let Some(dir) = out {
        manifest::ensure_dir(dir)?;
        manifest::write(
            &dir.join("psi_bar.csv"),
            &matrix_csv(&exp.psi_bar, &rows, &cols),
        )?;
        manifest::write(&dir.join("psi1.csv"), &matrix_csv(&exp.psi1, &rows, &cols))?;
        for (name, m) in &exp.aux {
            let (r, c) = aux_labels(name, m, &sets);
            manifest::write(&dir.join(format!("aux_{name}.csv")), &matrix_csv(m, &r, &c))?;
        }
        if !checks.is_empty() {
            let mut csv = "eps,E_plus,E_oplus,E_inf,E_minus,E_ominus\n".to_string();
            for (eps, n) in &checks {
                csv.push_str(&fluidpert::io::csv_line([
                    fmt_num(*eps),
                    fmt_num(n.e_plus),
                    opt_num(n.e_oplus),
                    fmt_num(n.e_inf),
                    opt_num(n.e_minus),
                    opt_num(n.e_ominus),
                ]));
                csv.push('\n');
            }
            manifest::write(&dir.join("eps_check.csv"), &csv)?;
        }
        manifest::write_json(&dir.join("manifest.json"), &manifest)?;
    }

    println!("regime: {}", exp.regime.as_str());
    println!(
        "rows: {} (S+ {}, S+migrating {}), columns: {} (S-migrating {}, S- {})",
        rows.len(),
        exp.n_plus,
        exp.n_oplus,
        cols.len(),
        exp.n_ominus,
        exp.n_minus
    );
    println!(
        "aux blocks: {}",
        aux_names
            .iter()
            .map(|s| s.as_str())
            .collect::<Vec<_>>()
            .join(" ")
    );
    if out.is_none() {
        println!("psi1:");
        print!("{}", matrix_csv(&exp.psi1, &rows, &cols));
    }
    for (eps, n) in &checks {
        println!(
            "eps={} E_plus={} E_oplus={} E_inf={} E_minus={} E_ominus={}",
            fmt3(*eps),
            fmt3(n.e_plus),
            opt3(n.e_oplus),
            fmt3(n.e_inf),
            opt3(n.e_minus),
            opt3(n.e_ominus)
        );
    }
    Ok(())
}

/// `∫₀ˣ π(s) ds` summed over phases: `q K⁻¹(e^{Kx} − I) R 1`.
fn cumulative_mass(law: &StationaryLaw, neg_k_inv: &Matrix, x: f64) -> f64 {
    let e = numerics::matrix_exp(&(&law.k * x));
    let id = Matrix::identity(law.k.nrows(), law.k.nrows());
    (&law.q * neg_k_inv * (id - e) * &law.bracket).sum()
}

pub fn density(
    argv: &[String],
    model_path: &Path,
    pert_path: Option<&Path>,
    x_spec: &str,
    tol: f64,
    out: Option<&Path>,
    format: Format,
) -> Result<()> {
    let timer = Timer::start();
    let model = load_model(model_path)?;
    let xs = grid::linear(x_spec)?;
    let opts = newton(tol)?;
    let sol = solve_psi(&model, &opts)?;
    let law = stationary_law(&model, &sol)?;
    let fol = match pert_path {
        Some(p) => {
            let spec = load_perturbation(p, &model)?;
            let psi1 = match spec.direction() {
                fluidpert::perturb::Direction::Generator(_) => {
                    fluidpert::perturb::psi1_generator(&model, &sol, &spec)?
                }
                fluidpert::perturb::Direction::Rate(_) => return Err(Error::NotGeneratorKind),
            };
            Some(first_order_law(&model, &sol, &law, &spec, &psi1)?)
        }
        None => None,
    };
    let neg_k_inv = numerics::inverse(&(-&law.k))?;
    let atoms = law.atoms();
    let integral = law.integrated_density()?;

    let labels = model.labels();
    let pis: Vec<RowVector> = xs.iter().map(|&x| density_at(&law, x)).collect();
    let cum: Vec<f64> = xs
        .iter()
        .map(|&x| {
            if x > 0.0 {
                cumulative_mass(&law, &neg_k_inv, x)
            } else {
                0.0
            }
        })
        .collect();
    let pi1s: Option<Vec<RowVector>> = fol
        .as_ref()
        .map(|f| xs.iter().map(|&x| density1_at(f, &law, x)).collect());

    let mut inputs = vec![model_path];
    inputs.extend(pert_path);
    let diagnostics = json!({
        "atoms": atoms.iter().collect::<Vec<_>>(),
        "atom_mass": atoms.sum(),
        "integral_mass": integral.sum(),
        "total_mass": atoms.sum() + integral.sum(),
        "poisson_residual": fol.as_ref().map(|f| f.poisson_residual),
        "iterations": sol.iterations,
        "residual": sol.residual,
    });
    let manifest = timer.manifest(
        "density",
        argv,
        &inputs,
        json!({ "x": x_spec, "tol": tol }),
        diagnostics.clone(),
    );

    let body = if format.json {
        json_text(&json!({
            "labels": labels,
            "x": xs,
            "pi": pis.iter().map(|v| v.iter().copied().collect::<Vec<_>>()).collect::<Vec<_>>(),
            "cum_mass": cum,
            "pi1": pi1s.as_ref().map(|v| v.iter().map(|r| r.iter().copied().collect::<Vec<_>>()).collect::<Vec<_>>()),
            "diagnostics": diagnostics,
        }))
    } else {
        let mut header = vec!["x".to_string()];
        header.extend(labels.iter().map(|l| format!("pi_{l}")));
        header.push("cum_mass".into());
        if pi1s.is_some() {
            header.extend(labels.iter().map(|l| format!("pi1_{l}")));
        }
        let mut csv = fluidpert::io::csv_line(header);
        csv.push('\n');
        for (i, &x) in xs.iter().enumerate() {
            let mut fields = vec![fmt_num(x)];
            fields.extend(pis[i].iter().map(|v| fmt_num(*v)));
            fields.push(fmt_num(cum[i]));
            if let Some(p1) = &pi1s {
                fields.extend(p1[i].iter().map(|v| fmt_num(*v)));
            }
            csv.push_str(&fluidpert::io::csv_line(fields));
            csv.push('\n');
        }
        csv
    };
    emit(&body, out, &manifest)?;
    if out.is_some() {
        println!(
            "atoms {} + density integral {} = {}",
            fmt_num(atoms.sum()),
            fmt_num(integral.sum()),
            fmt_num(atoms.sum() + integral.sum())
        );
    }
    Ok(())
}

fn summary_lines(result: &CaseResult, cells: &[CellCheck]) -> Vec<String> {
    let mut lines = vec![format!(
        "case {}: regime {}, r_minus {} ({}), slope {:.4}, R^2 {:.5}",
        result.case_id,
        result.regime.as_str(),
        fmt_num(result.r_minus),
        fmt3(result.r_minus),
        result.slope,
        result.r_squared
    )];
    for c in cells {
        lines.push(format!(
            "  {}({})={} published {} rel err {:.2}% {}",
            c.cell.norm.as_str(),
            fmt3(c.cell.eps).replace(".00", ""),
            fmt3(c.computed),
            fmt3(c.cell.value),
            100.0 * c.rel_err,
            if c.pass { "PASS" } else { "FAIL" }
        ));
    }
    lines
}

pub fn case(
    argv: &[String],
    id: &str,
    eps_grid: &str,
    tol: f64,
    out: Option<&Path>,
    format: Format,
) -> Result<()> {
    let timer = Timer::start();
    let ids: Vec<CaseId> = if id.eq_ignore_ascii_case("all") {
        CaseId::ALL.to_vec()
    } else {
        vec![id.parse()?]
    };
    let grid = grid::log(eps_grid)?;
    let opts = newton(tol)?;

    let mut results = Vec::new();
    for &cid in &ids {
        let result = bench::run_case(cid, &grid, &opts)?;
        let cells = bench::check_published(cid, &opts)?;
        results.push((result, cells));
    }

    let diagnostics: Vec<Value> = results
        .iter()
        .map(|(r, cells)| {
            json!({
                "case_id": r.case_id.as_str(),
                "regime": r.regime.as_str(),
                "r_minus": r.r_minus,
                "slope": r.slope,
                "r_squared": r.r_squared,
                "points": r.points.iter().map(|p| {
                    let mut v = norms_json(p.eps, &p.norms);
                    v["iterations"] = json!(p.iterations);
                    v["residual"] = json!(p.residual);
                    v
                }).collect::<Vec<_>>(),
                "published": cells.iter().map(|c| json!({
                    "eps": c.cell.eps, "norm": c.cell.norm.as_str(), "published": c.cell.value,
                    "computed": c.computed, "rel_err": c.rel_err, "pass": c.pass,
                })).collect::<Vec<_>>(),
            })
        })
        .collect();
    let manifest = timer.manifest(
        "case",
        argv,
        &[],
        json!({ "id": id, "eps_grid": eps_grid, "tol": tol }),
        json!(diagnostics),
    );

    let body = if format.json {
        json_text(&json!({ "cases": diagnostics }))
    } else {
        let mut csv = "case_id,eps,E_plus,E_oplus,E_inf,slope\n".to_string();
        for (r, _) in &results {
            for p in &r.points {
                csv.push_str(&fluidpert::io::csv_line([
                    r.case_id.as_str().to_string(),
                    fmt_num(p.eps),
                    fmt_num(p.norms.e_plus),
                    opt_num(p.norms.e_oplus),
                    fmt_num(p.norms.e_inf),
                    fmt_num(r.slope),
                ]));
                csv.push('\n');
            }
        }
        csv
    };
    emit(&body, out, &manifest)?;
    for (r, cells) in &results {
        for line in summary_lines(r, cells) {
            // Keep stdout clean for the data when it goes there.
            if out.is_some() {
                println!("{line}");
            } else {
                eprintln!("{line}");
            }
        }
    }
    Ok(())
}

pub fn simulate(
    argv: &[String],
    model_path: &Path,
    cfg: SimConfig,
    histogram: Option<&str>,
    out: Option<&Path>,
    format: Format,
) -> Result<()> {
    let timer = Timer::start();
    let model = load_model(model_path)?;
    let options = json!(cfg);
    let labels = model.labels();

    let (body, diagnostics) = match histogram {
        Some(spec) => {
            let binning = grid::bins(spec)?;
            let h = estimate_density(&model, &cfg, binning)?;
            let diagnostics = json!({ "binning": binning, "total": h.total() });
            let body = if format.json {
                json_text(&json!({
                    "labels": labels,
                    "centers": h.centers(),
                    "density": matrix_to_rows(&h.density()),
                    "overflow": h.overflow.iter().collect::<Vec<_>>(),
                    "atoms": h.atoms.iter().collect::<Vec<_>>(),
                }))
            } else {
                let mut header = vec!["bin".to_string(), "lo".into(), "hi".into()];
                header.extend(labels.iter().cloned());
                let mut csv = fluidpert::io::csv_line(header) + "\n";
                let w = binning.width;
                for b in 0..binning.bins {
                    let mut f = vec![
                        b.to_string(),
                        fmt_num(b as f64 * w),
                        fmt_num((b + 1) as f64 * w),
                    ];
                    f.extend(h.mass.row(b).iter().map(|v| fmt_num(*v)));
                    csv.push_str(&(fluidpert::io::csv_line(f) + "\n"));
                }
                let mut f = vec![
                    "overflow".to_string(),
                    fmt_num(binning.bins as f64 * w),
                    "inf".into(),
                ];
                f.extend(h.overflow.iter().map(|v| fmt_num(*v)));
                csv.push_str(&(fluidpert::io::csv_line(f) + "\n"));
                let mut f = vec!["atom".to_string(), fmt_num(0.0), fmt_num(0.0)];
                f.extend(h.atoms.iter().map(|v| fmt_num(*v)));
                csv.push_str(&(fluidpert::io::csv_line(f) + "\n"));
                csv
            };
            (body, diagnostics)
        }
        None => {
            let est = estimate_psi(&model, &cfg)?;
            let rows = side_labels(&model, Side::Plus);
            let cols = side_labels(&model, Side::Minus);
            let diagnostics = json!({ "censored_fraction": est.censored_fraction });
            let body = if format.json {
                json_text(&json!({
                    "rows": rows, "columns": cols,
                    "estimate": matrix_to_rows(&est.estimate),
                    "stderr": matrix_to_rows(&est.stderr),
                    "censored_fraction": est.censored_fraction,
                    "replications": est.replications,
                }))
            } else {
                let mut header = vec!["phase".to_string()];
                header.extend(cols.iter().cloned());
                header.extend(cols.iter().map(|c| format!("se_{c}")));
                let mut csv = fluidpert::io::csv_line(header) + "\n";
                for (i, r) in rows.iter().enumerate() {
                    let mut f = vec![r.clone()];
                    f.extend(est.estimate.row(i).iter().map(|v| fmt_num(*v)));
                    f.extend(est.stderr.row(i).iter().map(|v| fmt_num(*v)));
                    csv.push_str(&(fluidpert::io::csv_line(f) + "\n"));
                }
                csv
            };
            (body, diagnostics)
        }
    };
    let manifest = timer.manifest("simulate", argv, &[model_path], options, diagnostics);
    emit(&body, out, &manifest)
}
