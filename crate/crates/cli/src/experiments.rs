//! Experiment runners: each turns a config section into a report.

use std::fmt::Write as _;

use anyhow::{bail, Result};
use heislab::commutator::{commutator_study, CommutatorInput, VERDICT_BLOWUP, VERDICT_VANISHING};
use heislab::counterexample::scaling_study;
use heislab::deformation::{deformation_record, random_battery};
use heislab::field::{jet_z, jet_zz};
use heislab::flow::*;
use heislab::grid::{BoxRegion, NormSpec};
use heislab::group::frame_vector;
use heislab::mollifier::{LatticeRule, Mollifier};
use heislab::quotients::{quotient_limit_error, QuotientOrder, QuotientSpec};
use heislab::report::ConvergenceReport;
use heislab::{ClosedForm, FrameKind, HPoint};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::config::Config;
use crate::presets::{renormalization, scalar, vector_field};

/// A finished run: the report plus extra CSV artifacts by file stem.
pub struct Outcome {
    pub report: ConvergenceReport,
    pub artifacts: Vec<(String, String)>,
}

impl From<ConvergenceReport> for Outcome {
    fn from(report: ConvergenceReport) -> Self {
        Self { report, artifacts: Vec::new() }
    }
}

fn cube(n: usize, b: [f64; 2]) -> Result<BoxRegion<f64>> {
    Ok(BoxRegion::cube(n, b[0], b[1])?)
}

fn random_point(rng: &mut ChaCha8Rng, n: usize, r: f64) -> HPoint<f64> {
    let c: Vec<f64> = (0..2 * n + 1).map(|_| rng.gen_range(-r..r)).collect();
    HPoint::from_coords(n, &c).expect("2n+1 coordinates")
}

fn gap(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

fn random_cubic(rng: &mut ChaCha8Rng, n: usize) -> ClosedForm<f64> {
    let dim = 2 * n + 1;
    let mut terms = Vec::new();
    let mut e = vec![0u32; dim];
    loop {
        if e.iter().sum::<u32>() <= 3 {
            terms.push((rng.gen_range(-1.0..1.0), e.clone()));
        }
        let mut k = 0;
        while k < dim {
            e[k] += 1;
            if e[k] <= 3 {
                break;
            }
            e[k] = 0;
            k += 1;
        }
        if k == dim {
            break;
        }
    }
    ClosedForm::polynomial(n, terms)
}

pub fn identities(cfg: &Config) -> Result<Outcome> {
    let c = &cfg.identities;
    let n = cfg.n;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut gaps = [0.0f64; 9];
    let o = HPoint::origin(n);
    for _ in 0..c.samples {
        let (p, q, r) = (random_point(&mut rng, n, c.radius), random_point(&mut rng, n, c.radius), random_point(&mut rng, n, c.radius));
        let lhs = p.mul(&q)?.mul(&r)?;
        let rhs = p.mul(&q.mul(&r)?)?;
        gaps[0] = gaps[0].max(gap(lhs.coords(), rhs.coords()));
        gaps[1] = gaps[1].max(gap(p.mul(&o)?.coords(), p.coords())).max(gap(o.mul(&p)?.coords(), p.coords()));
        gaps[2] = gaps[2].max(gap(p.mul(&p.inverse())?.coords(), o.coords()));
        let lam = rng.gen_range(0.0..3.0);
        gaps[3] = gaps[3].max(gap(p.mul(&q)?.dilate(lam)?.coords(), p.dilate(lam)?.mul(&q.dilate(lam)?)?.coords()));
        let jj = p.jmap().jmap();
        let mut expect = vec![0.0; 2 * n + 1];
        for k in 0..2 * n {
            expect[k] = -p.coord(k);
        }
        gaps[6] = gaps[6].max(gap(jj.coords(), &expect));
        gaps[7] = gaps[7].max((p.jmap().dot(&q) + p.dot(&q.jmap())).abs());
        for j in 0..2 * n {
            let l = frame_vector(FrameKind::Left, j, &p)?;
            let rt = frame_vector(FrameKind::Right, j, &p)?;
            let coeff = if j < n { -4.0 * p.y(j) } else { 4.0 * p.x(j - n) };
            let mut want: Vec<f64> = l.to_vec();
            want[2 * n] += coeff;
            gaps[8] = gaps[8].max(gap(&rt, &want));
        }
    }
    for _ in 0..40 {
        let f = random_cubic(&mut rng, n);
        let p = random_point(&mut rng, n, 1.5);
        let tf = jet_z(&f, FrameKind::Left, 2 * n, &p)?;
        for j in 0..n {
            let yx = jet_zz(&f, n + j, j, &p)? - jet_zz(&f, j, n + j, &p)?;
            gaps[4] = gaps[4].max((yx - 4.0 * tf).abs());
        }
        let fi = f.compose_inverse();
        for j in 0..=2 * n {
            let lhs = jet_z(&fi, FrameKind::Left, j, &p)?;
            let rhs = -jet_z(&f, FrameKind::Right, j, &p.inverse())?;
            gaps[5] = gaps[5].max((lhs - rhs).abs());
        }
    }
    let names = [
        "associativity",
        "identity_element",
        "inverse",
        "dilation_homomorphism",
        "bracket_yx_4t",
        "inversion_rule",
        "j_squared",
        "j_skew",
        "right_frame",
    ];
    let mut rep = ConvergenceReport::new("identities", "index", &["index", "max_gap", "tolerance", "pass"]);
    rep.tolerances.insert("identity".into(), c.tolerance);
    for (i, (name, g)) in names.iter().zip(gaps).enumerate() {
        let pass = g <= c.tolerance;
        rep.push_row(vec![i as f64, g, c.tolerance, if pass { 1.0 } else { 0.0 }]);
        rep.check(*name, pass, format!("max gap {g:.3e}"));
    }
    Ok(rep.into())
}

pub fn quotients(cfg: &Config) -> Result<Outcome> {
    let c = &cfg.quotients;
    let n = cfg.n;
    let order = QuotientOrder::parse(&c.order)?;
    let f = scalar(&c.f, n, c.bump_radius)?;
    let spec = QuotientSpec {
        w: HPoint::from_coords(n, &c.w)?,
        ladder: c.ladder.clone(),
        order,
        norm: NormSpec::new(c.s, cube(n, c.a)?)?,
        omega: cube(n, c.omega)?,
        cells: c.cells,
    };
    let mut rep = quotient_limit_error(&f, &spec)?;
    if matches!(order, QuotientOrder::First | QuotientOrder::Second) && c.f == "bump" {
        let rate = rep.rates.get("error").map(|r| r.rate).unwrap_or(f64::NAN);
        rep.check("rate", (0.9..=1.1).contains(&rate), format!("fitted error rate {rate:.6} in [0.9, 1.1]"));
    }
    Ok(rep.into())
}

pub fn commutator(cfg: &Config) -> Result<Outcome> {
    let c = &cfg.commutator;
    let n = cfg.n;
    let lattice = match c.rule.as_str() {
        "spherical" if n == 1 => LatticeRule::default_for(1),
        "spherical" => bail!("the spherical rule needs n = 1; use rule = \"midpoint\""),
        "midpoint" => LatticeRule::Midpoint { cells: c.midpoint_cells },
        other => bail!("unknown lattice rule `{other}`"),
    };
    let reaction = match c.reaction.trim() {
        "zero" => ClosedForm::zero(n),
        "bump" => heislab::contact::standard_bump(n),
        r if r.starts_with("constant(") && r.ends_with(')') => {
            let k: f64 = r["constant(".len()..r.len() - 1].trim().parse().map_err(|_| anyhow::anyhow!("bad constant in `{r}`"))?;
            ClosedForm::constant(n, k)
        }
        other => bail!("unknown commutator reaction `{other}` (expected zero, bump or constant(κ))"),
    };
    let dim = 2 * n + 1;
    let input = CommutatorInput {
        u: ClosedForm::bump(n, c.u_center.clone(), vec![c.u_radius; dim]).into_arc(),
        u_box: None,
        b: vector_field(&c.psi, &c.field, c.lambda, n)?,
        c: reaction.into_arc(),
        rho: Mollifier::new(n)?,
        ladder: c.ladder.clone(),
        region: cube(n, c.k)?,
        k_cells: c.k_cells,
        lattice,
        coarse: lattice.coarse(),
        tau: c.tau,
    };
    let mut rep = commutator_study(&input)?;
    let expected = if c.field == "contact" { VERDICT_VANISHING } else { VERDICT_BLOWUP };
    let got = rep.verdict.clone().unwrap_or_default();
    rep.check("verdict", got == expected, format!("verdict {got}, expected {expected}"));
    Ok(rep.into())
}

pub fn flow(cfg: &Config) -> Result<Outcome> {
    let c = &cfg.flow;
    let n = cfg.n;
    let b = vector_field(&c.psi, &c.field, c.lambda, n)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let seeds: Vec<HPoint<f64>> = (0..c.seeds)
        .map(|_| {
            let v: Vec<f64> = (0..2 * n + 1).map(|_| rng.gen_range(c.seed_box[0]..c.seed_box[1])).collect();
            HPoint::from_coords(n, &v).expect("2n+1 coordinates")
        })
        .collect();
    let region = cube(n, c.region)?;
    let mut rep = ConvergenceReport::new(
        "flow",
        "dt",
        &["dt", "horizontality_defect", "logdet_gap", "min_det", "pushforward_measured", "pushforward_theory"],
    );
    rep.tolerances.insert("defect".into(), c.defect_tol);
    rep.tolerances.insert("noncontact_min".into(), c.noncontact_min);
    rep.tolerances.insert("pushforward_slack".into(), c.pushforward_slack);
    let mut last = None;
    let mut push_ok = true;
    for &dt in &c.dt_ladder {
        let f = integrate_flow(b.as_ref(), &seeds, c.horizon, dt)?;
        let defect = horizontality_defect(&f)?;
        let pb = pushforward_bound(&f, b.as_ref(), &region, c.region_cells);
        push_ok &= pb.holds(c.pushforward_slack);
        rep.push_row(vec![dt, defect, f.logdet_gap(), f.min_det().unwrap_or(f64::NAN), pb.measured, pb.theory]);
        last = Some(f);
    }
    let f = last.expect("nonempty ladder");
    let defect = rep.rows.last().expect("row")[1];
    if b.is_contact() {
        rep.check("horizontality", defect <= c.defect_tol, format!("defect {defect:.3e} ≤ {:e}", c.defect_tol));
    } else {
        rep.check("noncontact_defect", defect >= c.noncontact_min, format!("defect {defect:.3e} ≥ {}", c.noncontact_min));
    }
    rep.check("pushforward", push_ok, format!("measured ≤ theory·(1 + {})", c.pushforward_slack));
    let min_det = rep.column("min_det").expect("column").into_iter().fold(f64::INFINITY, f64::min);
    rep.check("orientation", min_det > 0.0, format!("min det D_pΦ = {min_det:.6}"));

    let mut dump = String::from("seed,tau");
    for j in 0..n {
        let _ = write!(dump, ",x{}", j + 1);
    }
    for j in 0..n {
        let _ = write!(dump, ",y{}", j + 1);
    }
    dump.push_str(",t,logdet\n");
    for (k, tr) in f.trajectories.iter().enumerate() {
        for (i, (tau, p)) in f.times.iter().zip(&tr.states).enumerate() {
            let _ = write!(dump, "{k},{tau:.16e}");
            for v in p.coords() {
                let _ = write!(dump, ",{v:.16e}");
            }
            let _ = writeln!(dump, ",{:.16e}", f.det(k, i).map_or(f64::NAN, f64::ln));
        }
    }
    Ok(Outcome { report: rep, artifacts: vec![("flow_trajectories".into(), dump)] })
}

pub fn transport(cfg: &Config) -> Result<Outcome> {
    let c = &cfg.transport;
    let n = cfg.n;
    let pr = TransportProblem {
        b: vector_field(&c.psi, &c.field, c.lambda, n)?,
        c: Reaction::preset(&c.reaction, n)?,
        u0: scalar(&c.u0, n, 0.5)?.into_arc(),
        form: TransportForm::parse(&c.form)?,
        mode: ReactionMode::parse(&c.mode)?,
        horizon: c.horizon,
        dt: c.h,
        out_box: cube(n, c.out_box)?,
        h: c.h,
        bounds: None,
    };
    let phi = TestFunction {
        horizon: c.test_horizon,
        chi: ClosedForm::poly_bump(n, c.chi_center.clone(), vec![c.chi_radius; 2 * n + 1], c.chi_power).into_arc(),
    };
    Ok(transport_study(&pr, &phi, &renormalization(&c.beta)?, c.levels)?.into())
}

pub fn counterexample(cfg: &Config) -> Result<Outcome> {
    let c = &cfg.counterexample;
    Ok(scaling_study(cfg.n, &c.betas, c.cells)?.into())
}

pub fn deformation(cfg: &Config) -> Result<Outcome> {
    let c = &cfg.deformation;
    let mut rep = ConvergenceReport::new(
        "deformation",
        "index",
        &[
            "index",
            "value_defining",
            "value_explicit",
            "symmetric_part",
            "j_term",
            "quadrature_tol",
            "bound_rhs",
            "formulas_agree",
            "bound_holds",
            "pass",
        ],
    );
    let flag = |b: bool| if b { 1.0 } else { 0.0 };
    let (mut agree, mut bound, mut jzero) = (true, true, true);
    for (i, inp) in random_battery(cfg.seed, c.count, cfg.n, c.contact, c.cells, c.order).iter().enumerate() {
        let r = deformation_record(inp, c.s_dual)?;
        agree &= r.formulas_agree;
        bound &= r.bound_holds != Some(false);
        jzero &= !c.contact || r.j_term == 0.0;
        rep.push_row(vec![
            i as f64,
            r.value_defining,
            r.value_explicit,
            r.symmetric_part,
            r.j_term,
            r.quadrature_tol,
            r.bound_rhs.unwrap_or(f64::NAN),
            flag(r.formulas_agree),
            r.bound_holds.map(flag).unwrap_or(f64::NAN),
            flag(r.pass),
        ]);
    }
    rep.check("formulas_agree", agree, "defining and explicit values within 2× quadrature tolerance");
    if c.contact {
        rep.check("j_term_zero", jzero, "J-term exactly zero");
        rep.check("bound", bound, "bound with c = Σ‖Z_i b_j‖_{L^{s'}} and 5% slack");
    }
    Ok(rep.into())
}
