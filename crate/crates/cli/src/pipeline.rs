//! Stage graph: path → density → decay → observable → Λ → Σ² → harnesses.

use std::collections::BTreeMap;
use std::path::Path;

use quenched::base::{mix_seed, STREAM_BACKWARD, STREAM_FORWARD, STREAM_MONTE_CARLO};
use quenched::spectral::{equivariant_density, twisted_eigendata};
use quenched::statistics::ldp_empirical;
use quenched::{
    adapted_norm_diagnostics, aperiodicity_check, birkhoff_samples, center, char_fn_check, clt_test,
    decay_estimate, default_gap_parameters, lambda_curve, lclt_test, ldp_rate, sample_path, scale_by_k,
    validate_scenario, variance, AdaptedNormData, BirkhoffSample, Cocycle, Complex64, EigenSettings,
    EquivariantChain, GridDensity, GridObservable, LambdaPoint, Observable, ScenarioReport, VarianceSettings,
};
use serde_json::{json, Value};

use crate::config::{Scaling, Scenario, Sigma2Source};
use crate::manifest::{fmt, Manifest, OutputDir, Seeds, StageRecord, StageStatus, StageTimer};
use crate::CliError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum Verb {
    /// Check the scenario and print the expanding-on-average verdict.
    Validate,
    /// Every stage, with the harnesses enabled in the config.
    Run,
    Density,
    Lyapunov,
    Variance,
    Clt,
    Ldp,
    Lclt,
    /// Adapted norms and aperiodicity.
    Diagnose,
}

impl Verb {
    pub fn name(self) -> &'static str {
        match self {
            Verb::Validate => "validate",
            Verb::Run => "run",
            Verb::Density => "density",
            Verb::Lyapunov => "lyapunov",
            Verb::Variance => "variance",
            Verb::Clt => "clt",
            Verb::Ldp => "ldp",
            Verb::Lclt => "lclt",
            Verb::Diagnose => "diagnose",
        }
    }
}

/// Report of the `validate` verb.
pub fn validate_report(scenario: &Scenario) -> Result<ScenarioReport, CliError> {
    let mut report = validate_scenario(&scenario.family, &scenario.base)?;
    if scenario.observable.is_lattice_valued() {
        report.warnings.push(
            "observable is lattice-valued; the local CLT harness will be refused by the aperiodicity gate".into(),
        );
    }
    Ok(report)
}

/// Which stages a verb needs.
#[derive(Debug, Clone, Copy, Default)]
struct Plan {
    observable: bool,
    adapted: bool,
    lambda: bool,
    variance: bool,
    clt: bool,
    ldp: bool,
    lclt: bool,
    charfn: bool,
    aperiodicity: bool,
}

impl Plan {
    fn new(verb: Verb, scenario: &Scenario) -> Plan {
        let h = &scenario.config.harness;
        let k2 = scenario.config.observable.scaling == Scaling::K2;
        let mut p = match verb {
            Verb::Validate | Verb::Density => Plan::default(),
            Verb::Run => Plan {
                lambda: true,
                variance: true,
                clt: h.clt,
                ldp: h.ldp,
                lclt: h.lclt,
                charfn: h.charfn,
                ..Plan::default()
            },
            Verb::Lyapunov => Plan {
                lambda: true,
                ..Plan::default()
            },
            Verb::Variance => Plan {
                variance: true,
                ..Plan::default()
            },
            Verb::Clt => Plan {
                variance: true,
                clt: true,
                ..Plan::default()
            },
            Verb::Ldp => Plan {
                lambda: true,
                ldp: true,
                ..Plan::default()
            },
            Verb::Lclt => Plan {
                variance: true,
                lclt: true,
                ..Plan::default()
            },
            Verb::Diagnose => Plan {
                adapted: true,
                aperiodicity: true,
                ..Plan::default()
            },
        };
        p.aperiodicity |= p.lclt;
        p.observable = p.lambda || p.variance || p.ldp || p.aperiodicity || p.adapted;
        p.adapted |= p.observable && k2;
        p
    }

    /// Horizons of the shared Monte Carlo sample.
    fn mc_horizons(&self, scenario: &Scenario) -> Vec<usize> {
        let h = &scenario.config.harness;
        let mut ns = Vec::new();
        if self.variance {
            ns.push(h.n_variance);
        }
        if self.clt {
            ns.push(h.n_clt);
        }
        if self.lclt {
            ns.extend(&h.lclt_n);
        }
        if self.charfn {
            ns.push(h.charfn_n);
        }
        ns.sort_unstable();
        ns.dedup();
        ns
    }
}

/// Failure inside a stage, before it is tagged with the stage name.
enum Fail {
    Core(quenched::Error),
    Io(std::io::Error),
}

impl From<quenched::Error> for Fail {
    fn from(e: quenched::Error) -> Self {
        Fail::Core(e)
    }
}

impl From<std::io::Error> for Fail {
    fn from(e: std::io::Error) -> Self {
        Fail::Io(e)
    }
}

#[derive(Default)]
struct Notes {
    refinement: BTreeMap<String, f64>,
    results: BTreeMap<String, Value>,
}

impl Notes {
    fn refine(&mut self, key: &str, value: f64) {
        self.refinement.insert(key.to_string(), value);
    }

    fn result(&mut self, key: &str, value: impl Into<Value>) {
        self.results.insert(key.to_string(), value.into());
    }
}

struct Session {
    out: OutputDir,
    notes: Notes,
    stages: Vec<StageRecord>,
}

type StageFn<'a, T> = Box<dyn FnOnce(&mut OutputDir, &mut Notes) -> Result<T, Fail> + 'a>;

impl Session {
    fn run<T>(&mut self, name: &str, optional: bool, f: StageFn<'_, T>) -> Result<Option<T>, CliError> {
        let timer = StageTimer::start(name);
        match f(&mut self.out, &mut self.notes) {
            Ok(v) => {
                self.stages.push(timer.finish(StageStatus::Ok, None));
                Ok(Some(v))
            }
            Err(Fail::Core(quenched::Error::Refused(msg))) if optional => {
                log::warn!("{name} refused: {msg}");
                self.notes.result(&format!("{name}_status"), "refused");
                self.stages.push(timer.finish(StageStatus::Refused, Some(msg)));
                Ok(None)
            }
            Err(fail) => {
                let (note, err) = match fail {
                    Fail::Core(e) => (e.to_string(), CliError::in_stage(name, e)),
                    Fail::Io(e) => (e.to_string(), CliError::Output(e)),
                };
                self.stages.push(timer.finish(StageStatus::Failed, Some(note)));
                Err(err)
            }
        }
    }

    fn required<T>(
        &mut self,
        name: &str,
        f: impl FnOnce(&mut OutputDir, &mut Notes) -> Result<T, Fail>,
    ) -> Result<T, CliError> {
        Ok(self.run(name, false, Box::new(f))?.expect("required stage returns a value"))
    }

    fn optional<T>(
        &mut self,
        name: &str,
        f: impl FnOnce(&mut OutputDir, &mut Notes) -> Result<T, Fail>,
    ) -> Result<Option<T>, CliError> {
        self.run(name, true, Box::new(f))
    }
}

/// Runs `verb` on a validated scenario, writing results and `manifest.json`
/// into `out_dir`. The manifest is written even when a stage fails.
pub fn execute(verb: Verb, scenario: &Scenario, out_dir: &Path) -> Result<Manifest, CliError> {
    let mut session = Session {
        out: OutputDir::create(out_dir)?,
        notes: Notes::default(),
        stages: Vec::new(),
    };
    let outcome = run_stages(verb, scenario, &mut session);
    let master = scenario.base.master_seed;
    let manifest = Manifest {
        tool: "quenched".into(),
        version: env!("CARGO_PKG_VERSION").into(),
        verb: verb.name().into(),
        config: scenario.config.clone(),
        seeds: Seeds {
            master,
            path_forward: mix_seed(master, STREAM_FORWARD),
            path_backward: mix_seed(master, STREAM_BACKWARD),
            monte_carlo: mix_seed(master, STREAM_MONTE_CARLO),
        },
        stages: session.stages,
        refinement: session.notes.refinement,
        results: session.notes.results,
        files: session.out.digests()?,
    };
    manifest.write_to(&session.out)?;
    outcome.map(|_| manifest)
}

fn lambda_rows(curve: &[LambdaPoint]) -> Vec<Vec<String>> {
    curve
        .iter()
        .map(|p| vec![fmt(p.theta), fmt(p.lambda_hat), fmt(p.stderr)])
        .collect()
}

/// `sup_j ‖s_j(ψ_j − c_j)‖_BV` over `lo..hi`, bounded through the raw BV norms.
fn bv_bound(obs: &Observable, cocycle: &Cocycle, lo: i64, hi: i64) -> quenched::Result<f64> {
    let family = cocycle.family();
    let raw: Vec<f64> = (0..family.len())
        .map(|s| obs.raw_bv_norm(s, family.get(s)))
        .collect();
    let mut sup: f64 = 0.0;
    for f in lo..hi {
        let (c, s) = obs.fiber_params(f)?;
        sup = sup.max(s.abs() * (raw[cocycle.symbol(f)?] + c.abs()));
    }
    Ok(sup)
}

fn sample_at(samples: &[BirkhoffSample], n: usize) -> &BirkhoffSample {
    samples
        .iter()
        .find(|s| s.n == n)
        .expect("horizon included in the Monte Carlo plan")
}

fn run_stages(verb: Verb, scenario: &Scenario, s: &mut Session) -> Result<(), CliError> {
    let cfg = &scenario.config;
    let g = &cfg.grid;
    let h = &cfg.harness;
    let n = g.resolution;
    let plan = Plan::new(verb, scenario);
    let horizons = plan.mc_horizons(scenario);
    let ldp_max = if plan.ldp { h.ldp_n.iter().copied().max().unwrap_or(0) } else { 0 };
    let n_mc = horizons.iter().copied().max().unwrap_or(0).max(ldp_max);

    let lo = -(g.depth as i64);
    let hi_obs = (g.n_fibers + g.h_max).max(n_mc).max(h.aperiodicity_horizon) as i64 + 1;
    let chain_hi = (hi_obs + g.adapted_horizon as i64 + 1).max(g.decay_horizon as i64 + 1);

    let report = s.required("validate", |_, notes| {
        let r = validate_report(scenario).map_err(|e| match e {
            CliError::Stage { source, .. } => Fail::Core(source),
            other => Fail::Core(quenched::Error::Usage(other.to_string())),
        })?;
        notes.result("mean_log_lambda", r.mean_log_lambda);
        notes.result("expanding_on_average", r.expanding_on_average);
        notes.result("warnings", r.warnings.clone());
        Ok(r)
    })?;
    if !report.expanding_on_average {
        return Err(CliError::Validation {
            field: "maps".into(),
            message: format!(
                "not expanding on average (mean log expansion {})",
                report.mean_log_lambda
            ),
        });
    }

    let cocycle = s.required("path", |_, notes| {
        let path = sample_path(&scenario.base, 2 * g.depth + 8, chain_hi as usize + 8)?;
        notes.result("path_window", json!([-(path.n_back() as i64), path.n_fwd()]));
        Ok(Cocycle::new(path, scenario.family.clone(), n)?)
    })?;

    let chain = s.required("density", |out, notes| {
        let chain = EquivariantChain::build(&cocycle, lo, (chain_hi - lo) as usize, g.depth)?;
        notes.refine("density_pullback_delta", chain.convergence_delta());
        notes.refine("density_equivariance_residual", chain.equivariance_residual(&cocycle, 0)?);
        let coarse = Cocycle::new(cocycle.path().clone(), scenario.family.clone(), n / 2)?;
        let c = equivariant_density(&coarse, 0, g.depth)?.density.real_parts();
        let fine = chain.values(0)?;
        let half_grid = c
            .iter()
            .enumerate()
            .map(|(i, v)| (v - 0.5 * (fine[2 * i] + fine[2 * i + 1])).abs())
            .sum::<f64>()
            / c.len() as f64;
        notes.refine("density_half_grid_l1", half_grid);
        out.csv(
            "density.csv",
            "index,x,density",
            fine.iter()
                .enumerate()
                .map(|(i, v)| vec![i.to_string(), fmt((i as f64 + 0.5) / n as f64), fmt(*v)]),
        )?;
        Ok(chain)
    })?;

    let decay = s.required("decay", |out, notes| {
        let probe = GridDensity::indicator(n, 0, n / 3);
        let fit = decay_estimate(&cocycle, &chain, 0, &probe, g.decay_horizon)?;
        notes.result("rho_hat", fit.rho_hat);
        notes.result("z_hat", fit.z_hat);
        notes.result("decay_up_spikes", fit.up_spikes().len());
        out.csv(
            "decay.csv",
            "n,gap,symbol",
            fit.gaps.iter().enumerate().map(|(k, gap)| {
                let sym = if k == 0 { String::new() } else { fit.symbols[k - 1].to_string() };
                vec![k.to_string(), fmt(*gap), sym]
            }),
        )?;
        Ok(fit)
    })?;

    if !plan.observable {
        return Ok(());
    }

    let mut obs = scenario.observable.clone();
    if cfg.observable.center {
        obs = s.required("center", |_, notes| {
            let c = center(&obs, &cocycle, &chain, lo, hi_obs)?;
            notes.refine("centering_residual", c.residual);
            Ok(c.observable)
        })?;
    }

    let adapted: Option<AdaptedNormData> = if plan.adapted {
        Some(s.required("adapted_norms", |out, notes| {
            let rho = decay.rho_hat.max(0.01);
            let (lambda_gap, epsilon) = default_gap_parameters(rho);
            let a = adapted_norm_diagnostics(
                &cocycle,
                &chain,
                rho,
                lambda_gap,
                epsilon,
                g.adapted_horizon,
                lo,
                (hi_obs - lo) as usize,
            )?;
            notes.result("adapted_lambda_gap", a.lambda_gap);
            notes.result("adapted_epsilon", a.epsilon);
            notes.result("k_max", a.k.iter().copied().fold(0.0, f64::max));
            notes.result("temperedness_tail", a.temperedness_tail);
            out.csv(
                "adapted.csv",
                "fiber,d1,d2,k",
                (0..a.k.len()).map(|j| {
                    vec![
                        (a.start + j as i64).to_string(),
                        fmt(a.d1[j]),
                        fmt(a.d2[j]),
                        fmt(a.k[j]),
                    ]
                }),
            )?;
            Ok(a)
        })?)
    } else {
        None
    };

    if cfg.observable.scaling == Scaling::K2 {
        let a = adapted.as_ref().expect("planned with K2 scaling");
        obs = s.required("scale", |_, notes| {
            let sc = scale_by_k(&obs, &cocycle, a)?;
            notes.result("scaled_condition_sup", sc.condition_sup);
            Ok(sc.observable)
        })?;
    }
    let grid_obs = GridObservable::new(&obs, cocycle.family(), n);
    let eigen = EigenSettings {
        depth: g.depth,
        n_fibers: g.n_fibers,
        theta_max: g.theta_max,
    };

    let curve = if plan.lambda {
        Some(s.required("lyapunov", |out, notes| {
            let zero = twisted_eigendata(&cocycle, &grid_obs, Complex64::new(0.0, 0.0), &eigen)?;
            let dev = zero.lambdas.iter().map(|l| (l - 1.0).norm()).fold(0.0, f64::max);
            notes.result("untwisted_lambda_max_deviation", dev);
            notes.refine("untwisted_pullback_delta", zero.convergence_delta);
            let curve = lambda_curve(&cocycle, &grid_obs, &h.theta_grid, &eigen)?;
            out.csv("lambda.csv", "theta,lambda_hat,stderr", lambda_rows(&curve))?;
            Ok(curve)
        })?)
    } else {
        None
    };

    let samples = if horizons.is_empty() {
        Vec::new()
    } else {
        s.required("sampling", |_, notes| {
            let density = chain.density(0)?;
            notes.result("mc_samples", h.samples);
            notes.result("mc_horizons", horizons.clone());
            Ok(birkhoff_samples(
                &cocycle,
                &obs,
                &density,
                &horizons,
                h.samples,
                scenario.base.master_seed,
            )?)
        })?
    };

    let mut sigma2 = h.sigma2;
    if plan.variance {
        let v = s.required("variance", |out, notes| {
            let settings = VarianceSettings {
                h_max: g.h_max,
                n_fibers: g.n_fibers,
                bv_bound: bv_bound(&obs, &cocycle, 0, (g.n_fibers + g.h_max) as i64)?,
                h_fd: h.h_fd,
                eigen,
            };
            let v = variance(
                &cocycle,
                &grid_obs,
                &chain,
                &decay,
                sample_at(&samples, h.n_variance),
                &settings,
            )?;
            let mut rows = Vec::new();
            if let Some(se) = v.series {
                rows.push(vec!["series".into(), fmt(se.sigma2), fmt(se.stderr), fmt(se.tail_bound)]);
                notes.result("sigma2_series", se.sigma2);
                notes.result("series_tail_bound", se.tail_bound);
            }
            if let Some(note) = &v.series_note {
                notes.result("series_note", note.clone());
            }
            rows.push(vec!["fd".into(), fmt(v.sigma2_fd), fmt(v.fd_stderr), fmt(v.h_fd)]);
            rows.push(vec!["mc".into(), fmt(v.sigma2_mc), fmt(v.mc_stderr), v.mc_n.to_string()]);
            notes.result("sigma2_fd", v.sigma2_fd);
            notes.result("sigma2_mc", v.sigma2_mc);
            notes.result("sigma2_mc_stderr", v.mc_stderr);
            out.csv("variance.csv", "estimator,sigma2,stderr,detail", rows)?;
            Ok(v)
        })?;
        if sigma2.is_none() {
            sigma2 = Some(match h.sigma2_source {
                Sigma2Source::Series => v.sigma2_series().unwrap_or(v.sigma2_fd),
                Sigma2Source::Fd => v.sigma2_fd,
                Sigma2Source::Mc => v.sigma2_mc,
            });
        }
    }
    let sigma2 = sigma2.unwrap_or(f64::NAN);
    s.notes.result("sigma2_used", if sigma2.is_finite() { json!(sigma2) } else { Value::Null });

    if plan.clt {
        s.required("clt", |out, notes| {
            let r = clt_test(sample_at(&samples, h.n_clt), sigma2, h.ks_threshold)?;
            notes.result("ks_distance", r.ks_distance);
            notes.result("clt_pass", r.pass);
            out.csv(
                "clt.csv",
                "x,empirical_cdf,normal_cdf",
                r.cdf_grid.iter().map(|(x, e, g)| vec![fmt(*x), fmt(*e), fmt(*g)]),
            )?;
            Ok(())
        })?;
    }

    if plan.ldp {
        let curve = curve.as_deref().expect("planned with the Lyapunov stage");
        s.required("ldp", |out, notes| {
            let rates = ldp_rate(curve, &h.eps_grid)?;
            let m = h.ldp_samples.unwrap_or(h.samples);
            let density = chain.density(0)?;
            let tails = birkhoff_samples(&cocycle, &obs, &density, &h.ldp_n, m, scenario.base.master_seed)?;
            let points = ldp_empirical(&tails, &h.eps_grid);
            notes.result("ldp_samples", m);
            let opt = |x: Option<f64>| x.map(fmt).unwrap_or_default();
            out.csv(
                "ldp.csv",
                "epsilon,c,theta_star,n,count,m,frequency,wilson_lo,wilson_hi,rate,incremental_rate",
                points.iter().map(|p| {
                    let r = rates
                        .iter()
                        .find(|r| r.epsilon == p.epsilon)
                        .expect("same epsilon grid");
                    vec![
                        fmt(p.epsilon),
                        fmt(r.c),
                        fmt(r.theta_star),
                        p.n.to_string(),
                        p.count.to_string(),
                        p.m.to_string(),
                        fmt(p.frequency),
                        fmt(p.wilson_lo),
                        fmt(p.wilson_hi),
                        opt(p.rate),
                        opt(p.incremental_rate),
                    ]
                }),
            )?;
            Ok(())
        })?;
    }

    let aperiodicity = if plan.aperiodicity {
        Some(s.required("aperiodicity", |out, notes| {
            let a = aperiodicity_check(&cocycle, &grid_obs, &h.aperiodicity_t, h.aperiodicity_horizon)?;
            notes.result("aperiodic", a.aperiodic);
            out.csv(
                "aperiodicity.csv",
                "t,rate",
                a.rates.iter().map(|r| vec![fmt(r.t), fmt(r.rate)]),
            )?;
            Ok(a)
        })?)
    } else {
        None
    };

    if plan.lclt {
        let ap = aperiodicity.as_ref().expect("planned with the aperiodicity stage");
        s.optional("lclt", |out, notes| {
            let lclt_samples: Vec<BirkhoffSample> =
                h.lclt_n.iter().map(|k| sample_at(&samples, *k).clone()).collect();
            let j = (h.lclt_interval[0], h.lclt_interval[1]);
            let results = lclt_test(ap, &lclt_samples, sigma2, j, &h.lclt_z_grid)?;
            notes.result(
                "lclt_sup_deviation",
                results.iter().map(|r| json!({"n": r.n, "sup": r.sup_deviation, "stderr": r.stderr})).collect::<Vec<_>>(),
            );
            notes.result("lclt_status", "ok");
            out.csv(
                "lclt.csv",
                "n,sup_deviation,stderr",
                results.iter().map(|r| vec![r.n.to_string(), fmt(r.sup_deviation), fmt(r.stderr)]),
            )?;
            out.csv(
                "lclt_profile.csv",
                "n,s,frequency,statistic,kernel,deviation,stderr",
                results.iter().flat_map(|r| {
                    r.rows.iter().map(move |row| {
                        vec![
                            r.n.to_string(),
                            fmt(row.s),
                            fmt(row.frequency),
                            fmt(row.statistic),
                            fmt(row.kernel),
                            fmt(row.deviation),
                            fmt(row.stderr),
                        ]
                    })
                }),
            )?;
            Ok(())
        })?;
    }

    if plan.charfn {
        s.required("charfn", |out, _| {
            let density = chain.density(0)?;
            let rows = char_fn_check(
                &cocycle,
                &grid_obs,
                &density,
                sample_at(&samples, h.charfn_n),
                sigma2,
                &h.charfn_t,
            )?;
            out.csv(
                "charfn.csv",
                "t,operator_re,operator_im,mc_re,mc_im,mc_stderr,gaussian,max_deviation",
                rows.iter().map(|r| {
                    vec![
                        fmt(r.t),
                        fmt(r.operator_value.re),
                        fmt(r.operator_value.im),
                        fmt(r.mc_value.re),
                        fmt(r.mc_value.im),
                        fmt(r.mc_stderr),
                        fmt(r.gaussian),
                        fmt(r.max_deviation),
                    ]
                }),
            )?;
            Ok(())
        })?;
    }
    Ok(())
}
