//! Solution-space optimization: NSGA-II over ⟨mode, power⟩ pairs that
//! reduces the continuous transmit-parameter space to a small Pareto front of
//! ⟨transmit delay, energy⟩ trade-offs, and the action space built from it.

use std::fmt::Write as _;
use std::path::Path;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::channel::{self, ChannelParams, Emission};
use crate::error::{Error, Result};
use crate::modem::{self, FramingParams, ModeTable, PowerProfile};
use crate::seed;
use crate::simcore::Decision;

/// Objective vectors closer than this in both coordinates are duplicates.
pub const DEDUP_TOL: f64 = 1e-9;

/// How the ⟨delay, energy⟩ objectives of a candidate are scored.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ObjectiveModel {
    /// Raw on-air duration and `p·δ_tx`. Power never shortens a packet, so
    /// each mode contributes at most its minimum feasible power.
    Nominal,
    /// Duration and energy per successful delivery under unit-mean Rayleigh
    /// fading: both are divided by `P[ρ²·γ₁ ≥ γ⁰] = exp(−(π/4)·γ⁰/γ₁)`.
    #[default]
    FadingExpected,
}

/// One ⟨mode, power⟩ candidate and its objectives.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ParetoSolution {
    pub mode: u8,
    pub power_w: f64,
    /// ⟨delay seconds, energy joules⟩.
    pub objectives: [f64; 2],
    pub feasible: bool,
    /// Threshold shortfall in dB; zero when feasible.
    pub violation_db: f64,
}

impl ParetoSolution {
    pub fn delay_s(&self) -> f64 {
        self.objectives[0]
    }

    pub fn energy_j(&self) -> f64 {
        self.objectives[1]
    }

    pub fn decision(&self) -> Decision {
        Decision::Transmit { mode: self.mode, power_w: self.power_w }
    }
}

/// Pareto dominance on the objective vectors (both minimized).
pub fn dominates(a: &ParetoSolution, b: &ParetoSolution) -> bool {
    let [a0, a1] = a.objectives;
    let [b0, b1] = b.objectives;
    a0 <= b0 && a1 <= b1 && (a0 < b0 || a1 < b1)
}

/// Constrained dominance: feasible beats infeasible; among infeasible the
/// smaller threshold shortfall wins; among feasible, Pareto dominance.
pub fn constrained_dominates(a: &ParetoSolution, b: &ParetoSolution) -> bool {
    match (a.feasible, b.feasible) {
        (true, false) => true,
        (false, true) => false,
        (false, false) => a.violation_db < b.violation_db,
        (true, true) => dominates(a, b),
    }
}

/// Fast non-dominated sort; returns fronts of indices into `pop`.
pub fn non_dominated_sort(pop: &[ParetoSolution]) -> Vec<Vec<usize>> {
    let n = pop.len();
    let mut dominated_by: Vec<Vec<usize>> = vec![Vec::new(); n];
    let mut count = vec![0usize; n];
    for i in 0..n {
        for j in (i + 1)..n {
            if constrained_dominates(&pop[i], &pop[j]) {
                dominated_by[i].push(j);
                count[j] += 1;
            } else if constrained_dominates(&pop[j], &pop[i]) {
                dominated_by[j].push(i);
                count[i] += 1;
            }
        }
    }
    let mut fronts = Vec::new();
    let mut current: Vec<usize> = (0..n).filter(|&i| count[i] == 0).collect();
    while !current.is_empty() {
        let mut next = Vec::new();
        for &i in &current {
            for &j in &dominated_by[i] {
                count[j] -= 1;
                if count[j] == 0 {
                    next.push(j);
                }
            }
        }
        next.sort_unstable();
        fronts.push(current);
        current = next;
    }
    fronts
}

/// Crowding distance of each member of `front` (same order).
pub fn crowding_distance(pop: &[ParetoSolution], front: &[usize]) -> Vec<f64> {
    let n = front.len();
    let mut dist = vec![0.0; n];
    if n <= 2 {
        return vec![f64::INFINITY; n];
    }
    for m in 0..2 {
        let mut order: Vec<usize> = (0..n).collect();
        order.sort_by(|&a, &b| pop[front[a]].objectives[m].total_cmp(&pop[front[b]].objectives[m]).then(a.cmp(&b)));
        let lo = pop[front[order[0]]].objectives[m];
        let hi = pop[front[order[n - 1]]].objectives[m];
        dist[order[0]] = f64::INFINITY;
        dist[order[n - 1]] = f64::INFINITY;
        let range = hi - lo;
        if range <= 0.0 {
            continue;
        }
        for k in 1..n - 1 {
            let gap = pop[front[order[k + 1]]].objectives[m] - pop[front[order[k - 1]]].objectives[m];
            dist[order[k]] += gap / range;
        }
    }
    dist
}

/// Hypervolume dominated by `points` up to `reference` (two objectives).
pub fn hypervolume(points: &[[f64; 2]], reference: [f64; 2]) -> f64 {
    let mut pts: Vec<[f64; 2]> =
        points.iter().copied().filter(|p| p[0] < reference[0] && p[1] < reference[1]).collect();
    pts.sort_by(|a, b| a[0].total_cmp(&b[0]).then(a[1].total_cmp(&b[1])));
    let mut area = 0.0;
    let mut best_y = reference[1];
    for p in &pts {
        if p[1] >= best_y {
            continue;
        }
        area += (reference[0] - p[0]) * (best_y - p[1]);
        best_y = p[1];
    }
    area
}

/// Scores candidates at a fixed design distance with `ρ = 1` and no interference.
#[derive(Clone, Debug)]
pub struct ObjectiveEvaluator {
    pub modes: ModeTable,
    pub framing: FramingParams,
    pub power: PowerProfile,
    pub channel: ChannelParams,
    pub design_distance_m: f64,
    pub payload_bytes: u32,
    pub model: ObjectiveModel,
    gain: f64,
}

impl ObjectiveEvaluator {
    pub fn new(
        modes: ModeTable,
        framing: FramingParams,
        power: PowerProfile,
        channel: ChannelParams,
        design_distance_m: f64,
        payload_bytes: u32,
        model: ObjectiveModel,
    ) -> Result<Self> {
        let gain = channel::transmission_loss(design_distance_m / 1000.0, &channel)?;
        if payload_bytes == 0 {
            return Err(Error::Config("design payload must be at least one byte".into()));
        }
        Ok(Self { modes, framing, power, channel, design_distance_m, payload_bytes, model, gain })
    }

    /// SINR in dB of a sole sender at the design distance.
    pub fn sinr_db(&self, power_w: f64) -> f64 {
        if power_w <= 0.0 {
            return f64::NEG_INFINITY;
        }
        channel::linear_to_db(channel::sinr(Emission { power_w, gain: self.gain }, &[], &self.channel))
    }

    pub fn evaluate(&self, mode_index: u8, power_w: f64) -> Result<ParetoSolution> {
        let mode = self
            .modes
            .get(mode_index)
            .ok_or(Error::ActionOutOfRange { index: usize::from(mode_index), size: self.modes.len() })?;
        let tx = modem::tx_duration(self.payload_bytes, mode, &self.framing)?;
        let g_db = self.sinr_db(power_w);
        let feasible = g_db >= mode.threshold_db;
        let violation_db = if feasible { 0.0 } else { (mode.threshold_db - g_db).min(1e6) };
        let success = match self.model {
            ObjectiveModel::Nominal => 1.0,
            ObjectiveModel::FadingExpected if feasible => {
                (-std::f64::consts::FRAC_PI_4 * channel::db_to_linear(mode.threshold_db - g_db)).exp()
            }
            ObjectiveModel::FadingExpected => 1.0,
        };
        let delay = tx / success;
        Ok(ParetoSolution { mode: mode_index, power_w, objectives: [delay, power_w * delay], feasible, violation_db })
    }

    /// Worst objective values over a dense scan of feasible candidates,
    /// nudged outward so that every feasible point has positive volume.
    pub fn worst_corner(&self) -> [f64; 2] {
        let steps = 4000;
        let mut worst = [0.0f64; 2];
        for m in 1..=self.modes.len() as u8 {
            for k in 0..=steps {
                let p = self.power.min_tx_w + (self.power.max_tx_w - self.power.min_tx_w) * k as f64 / steps as f64;
                if let Ok(s) = self.evaluate(m, p) {
                    if s.feasible {
                        worst[0] = worst[0].max(s.objectives[0]);
                        worst[1] = worst[1].max(s.objectives[1]);
                    }
                }
            }
        }
        [worst[0] * 1.01, worst[1] * 1.01]
    }
}

/// NSGA-II settings.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GaParams {
    pub population: usize,
    pub generations: usize,
    pub crossover_prob: f64,
    /// Spread of the power blend crossover (BLX-α).
    pub blend_alpha: f64,
    pub mode_mutation_prob: f64,
    pub power_mutation_prob: f64,
    pub power_sigma_w: f64,
    /// Snap powers to this grid after variation, when set.
    pub power_grid_w: Option<f64>,
}

impl Default for GaParams {
    fn default() -> Self {
        Self {
            population: 500,
            generations: 500,
            crossover_prob: 0.9,
            blend_alpha: 0.5,
            mode_mutation_prob: 0.1,
            power_mutation_prob: 0.5,
            power_sigma_w: 2.0,
            power_grid_w: None,
        }
    }
}

impl GaParams {
    pub fn validate(&self) -> Result<()> {
        if self.population < 2 || self.generations == 0 {
            return Err(Error::Config("population must be at least 2 and generations positive".into()));
        }
        for (name, p) in [
            ("crossover_prob", self.crossover_prob),
            ("mode_mutation_prob", self.mode_mutation_prob),
            ("power_mutation_prob", self.power_mutation_prob),
        ] {
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::Config(format!("{name} must lie in [0, 1]")));
            }
        }
        if !(self.power_sigma_w >= 0.0 && self.blend_alpha >= 0.0) {
            return Err(Error::Config("power sigma and blend alpha must be non-negative".into()));
        }
        if self.power_grid_w.is_some_and(|g| !(g > 0.0)) {
            return Err(Error::Config("power grid step must be positive".into()));
        }
        Ok(())
    }
}

/// Result of one NSGA-II run.
#[derive(Clone, Debug)]
pub struct EvolveResult {
    /// Deduplicated first front, ascending delay.
    pub front: Vec<ParetoSolution>,
    /// Hypervolume of the feasible first front after each generation.
    pub hypervolume: Vec<f64>,
    pub reference: [f64; 2],
}

struct Ga<'a> {
    eval: &'a ObjectiveEvaluator,
    params: &'a GaParams,
    rng: seed::SimRng,
}

impl Ga<'_> {
    fn snap(&self, p: f64) -> f64 {
        let (lo, hi) = (self.eval.power.min_tx_w, self.eval.power.max_tx_w);
        let p = p.clamp(lo, hi);
        match self.params.power_grid_w {
            Some(g) => (lo + ((p - lo) / g).round() * g).clamp(lo, hi),
            None => p,
        }
    }

    fn random_member(&mut self) -> Result<ParetoSolution> {
        let m = self.rng.random_range(1..=self.eval.modes.len() as u8);
        let (lo, hi) = (self.eval.power.min_tx_w, self.eval.power.max_tx_w);
        let raw = self.rng.random_range(lo..=hi);
        let p = self.snap(raw);
        self.eval.evaluate(m, p)
    }

    /// Binary tournament on (rank, crowding).
    fn tournament(&mut self, rank: &[usize], crowd: &[f64]) -> usize {
        let n = rank.len();
        let a = self.rng.random_range(0..n);
        let b = self.rng.random_range(0..n);
        if rank[a] != rank[b] {
            return if rank[a] < rank[b] { a } else { b };
        }
        if crowd[a] != crowd[b] {
            return if crowd[a] > crowd[b] { a } else { b };
        }
        a.min(b)
    }

    fn offspring(&mut self, pop: &[ParetoSolution], rank: &[usize], crowd: &[f64]) -> Result<Vec<ParetoSolution>> {
        let n_modes = self.eval.modes.len() as u8;
        let mut out = Vec::with_capacity(pop.len());
        while out.len() < pop.len() {
            let pa = pop[self.tournament(rank, crowd)];
            let pb = pop[self.tournament(rank, crowd)];
            let (mut ma, mut mb) = (pa.mode, pb.mode);
            let (mut xa, mut xb) = (pa.power_w, pb.power_w);
            if self.rng.random::<f64>() < self.params.crossover_prob {
                // single cut between the two genes, then blend the powers
                std::mem::swap(&mut ma, &mut mb);
                let (lo, hi) = (xa.min(xb), xa.max(xb));
                let ext = self.params.blend_alpha * (hi - lo);
                let span = (lo - ext)..=(hi + ext);
                xa = self.rng.random_range(span.clone());
                xb = self.rng.random_range(span);
            }
            for (m, x) in [(&mut ma, &mut xa), (&mut mb, &mut xb)] {
                if self.rng.random::<f64>() < self.params.mode_mutation_prob {
                    *m = self.rng.random_range(1..=n_modes);
                }
                if self.rng.random::<f64>() < self.params.power_mutation_prob {
                    let z: f64 = self.rng.sample(StandardNormal);
                    *x += self.params.power_sigma_w * z;
                }
            }
            out.push(self.eval.evaluate(ma, self.snap(xa))?);
            if out.len() < pop.len() {
                out.push(self.eval.evaluate(mb, self.snap(xb))?);
            }
        }
        Ok(out)
    }
}

/// Ranks and crowding distances for every member of `pop`.
fn rank_and_crowd(pop: &[ParetoSolution]) -> (Vec<Vec<usize>>, Vec<usize>, Vec<f64>) {
    let fronts = non_dominated_sort(pop);
    let mut rank = vec![0; pop.len()];
    let mut crowd = vec![0.0; pop.len()];
    for (r, f) in fronts.iter().enumerate() {
        for (&i, d) in f.iter().zip(crowding_distance(pop, f)) {
            rank[i] = r;
            crowd[i] = d;
        }
    }
    (fronts, rank, crowd)
}

fn same_point(a: &ParetoSolution, b: &ParetoSolution) -> bool {
    (a.objectives[0] - b.objectives[0]).abs() < DEDUP_TOL && (a.objectives[1] - b.objectives[1]).abs() < DEDUP_TOL
}

/// Drops members whose objective vector duplicates an earlier one.
pub fn dedup(solutions: &[ParetoSolution]) -> Vec<ParetoSolution> {
    let mut out: Vec<ParetoSolution> = Vec::with_capacity(solutions.len());
    for s in solutions {
        if !out.iter().any(|o| same_point(o, s)) {
            out.push(*s);
        }
    }
    out
}

/// Elitist environmental selection of `n` members from `combined`.
///
/// Distinct objective vectors are preferred; duplicates only fill leftover
/// places, so clones cannot crowd out front members.
fn select(combined: Vec<ParetoSolution>, n: usize) -> Vec<ParetoSolution> {
    let mut unique = Vec::with_capacity(combined.len());
    let mut clones = Vec::new();
    for s in combined {
        if unique.iter().any(|u: &ParetoSolution| same_point(u, &s) && u.feasible == s.feasible) {
            clones.push(s);
        } else {
            unique.push(s);
        }
    }
    let (fronts, _, _) = rank_and_crowd(&unique);
    let mut next = Vec::with_capacity(n);
    for f in fronts {
        if next.len() + f.len() <= n {
            next.extend(f.iter().map(|&i| unique[i]));
            continue;
        }
        let crowd = crowding_distance(&unique, &f);
        let mut order: Vec<usize> = (0..f.len()).collect();
        order.sort_by(|&a, &b| crowd[b].total_cmp(&crowd[a]).then(a.cmp(&b)));
        next.extend(order.into_iter().take(n - next.len()).map(|k| unique[f[k]]));
        break;
    }
    next.extend(clones.into_iter().take(n - next.len()));
    next
}

fn feasible_front(pop: &[ParetoSolution]) -> Vec<ParetoSolution> {
    let feasible: Vec<ParetoSolution> = pop.iter().copied().filter(|s| s.feasible).collect();
    let fronts = non_dominated_sort(&feasible);
    let mut front: Vec<ParetoSolution> =
        fronts.first().map_or(Vec::new(), |f| f.iter().map(|&i| feasible[i]).collect());
    front.sort_by(|a, b| a.objectives[0].total_cmp(&b.objectives[0]).then(a.objectives[1].total_cmp(&b.objectives[1])));
    dedup(&front)
}

/// Runs NSGA-II and returns the deduplicated feasible first front.
pub fn evolve(eval: &ObjectiveEvaluator, params: &GaParams, seed: u64) -> Result<EvolveResult> {
    params.validate()?;
    let any_feasible = eval.modes.iter().any(|m| eval.sinr_db(eval.power.max_tx_w) >= m.threshold_db);
    if !any_feasible {
        return Err(Error::Infeasible(format!(
            "no mode meets its threshold at {} m even at {} W",
            eval.design_distance_m, eval.power.max_tx_w
        )));
    }
    let reference = eval.worst_corner();
    let mut ga = Ga { eval, params, rng: seed::rng(seed, &[0x550]) };
    let mut pop = (0..params.population).map(|_| ga.random_member()).collect::<Result<Vec<_>>>()?;
    let mut history = Vec::with_capacity(params.generations);
    for _ in 0..params.generations {
        let (_, rank, crowd) = rank_and_crowd(&pop);
        let children = ga.offspring(&pop, &rank, &crowd)?;
        let mut combined = pop;
        combined.extend(children);
        pop = select(combined, params.population);
        let pts: Vec<[f64; 2]> = feasible_front(&pop).iter().map(|s| s.objectives).collect();
        history.push(hypervolume(&pts, reference));
    }
    let front = feasible_front(&pop);
    if front.is_empty() {
        return Err(Error::Infeasible("evolution ended without a feasible solution".into()));
    }
    Ok(EvolveResult { front, hypervolume: history, reference })
}

/// Exhaustive Pareto front over every mode and a uniform power grid.
pub fn grid_front(eval: &ObjectiveEvaluator, step_w: f64) -> Result<Vec<ParetoSolution>> {
    let (lo, hi) = (eval.power.min_tx_w, eval.power.max_tx_w);
    let n = ((hi - lo) / step_w).round() as usize;
    let mut all = Vec::new();
    for m in 1..=eval.modes.len() as u8 {
        for k in 0..=n {
            let s = eval.evaluate(m, (lo + k as f64 * step_w).min(hi))?;
            if s.feasible {
                all.push(s);
            }
        }
    }
    let front: Vec<ParetoSolution> = all.iter().copied().filter(|a| !all.iter().any(|b| dominates(b, a))).collect();
    let mut front = dedup(&front);
    front.sort_by(|a, b| a.objectives[0].total_cmp(&b.objectives[0]));
    Ok(front)
}

/// The discrete action set `{wait} ∪ front`, ordered by ascending delay.
#[derive(Clone, Debug, PartialEq)]
pub struct ActionSpace {
    solutions: Vec<ParetoSolution>,
}

impl ActionSpace {
    pub fn new(mut solutions: Vec<ParetoSolution>) -> Result<Self> {
        if solutions.is_empty() {
            return Err(Error::Infeasible("action space needs at least one transmit action".into()));
        }
        solutions.sort_by(|a, b| {
            a.objectives[0].total_cmp(&b.objectives[0]).then(a.objectives[1].total_cmp(&b.objectives[1]))
        });
        Ok(Self { solutions })
    }

    /// Number of actions including wait.
    pub fn len(&self) -> usize {
        self.solutions.len() + 1
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn solutions(&self) -> &[ParetoSolution] {
        &self.solutions
    }

    /// Action 0 is wait; action `k` is the `k`-th transmit solution.
    pub fn decision(&self, index: usize) -> Result<Decision> {
        match index {
            0 => Ok(Decision::Wait),
            k if k <= self.solutions.len() => Ok(self.solutions[k - 1].decision()),
            _ => Err(Error::ActionOutOfRange { index, size: self.len() }),
        }
    }

    pub fn decisions(&self) -> Vec<Decision> {
        (0..self.len()).map(|k| self.decision(k).expect("in range")).collect()
    }

    pub fn min_energy(&self) -> &ParetoSolution {
        self.solutions.iter().min_by(|a, b| a.objectives[1].total_cmp(&b.objectives[1])).expect("non-empty")
    }

    pub fn min_delay(&self) -> &ParetoSolution {
        &self.solutions[0]
    }

    pub fn to_text(&self) -> String {
        front_to_text(&self.solutions)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_text())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::new(front_from_text(&std::fs::read_to_string(path)?, path)?)
    }
}

/// Thins `front` to `target` members and wraps them with the wait action.
///
/// Both extremes are always kept; interior members are removed one at a time,
/// lowest crowding distance first, so the survivors stay spread out.
pub fn build_action_space(front: &[ParetoSolution], target: usize) -> Result<ActionSpace> {
    if target == 0 {
        return Err(Error::Config("action count must be at least 1".into()));
    }
    let mut keep = dedup(front);
    if keep.len() < target {
        return Err(Error::FrontTooSmall { available: keep.len(), requested: target });
    }
    while keep.len() > target {
        let idx: Vec<usize> = (0..keep.len()).collect();
        let crowd = crowding_distance(&keep, &idx);
        let victim = (0..keep.len())
            .filter(|&k| crowd[k].is_finite())
            .min_by(|&a, &b| crowd[a].total_cmp(&crowd[b]).then(a.cmp(&b)));
        match victim {
            Some(v) => {
                keep.remove(v);
            }
            // only boundary members remain; drop the later duplicate extreme
            None => {
                keep.truncate(target);
            }
        }
    }
    ActionSpace::new(keep)
}

/// Text table with one `mode power_w delay_s energy_j` line per solution.
pub fn front_to_text(front: &[ParetoSolution]) -> String {
    let mut s = String::from("# mode power_w delay_s energy_j\n");
    for p in front {
        let _ = writeln!(s, "{} {:.9} {:.9} {:.9}", p.mode, p.power_w, p.objectives[0], p.objectives[1]);
    }
    s
}

pub fn front_from_text(text: &str, path: &Path) -> Result<Vec<ParetoSolution>> {
    let bad = |line: usize, detail: &str| Error::Format {
        what: "front table",
        path: path.to_owned(),
        detail: format!("line {line}: {detail}"),
    };
    let mut out = Vec::new();
    for (n, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let f: Vec<&str> = line.split_whitespace().collect();
        if f.len() != 4 {
            return Err(bad(n + 1, "expected `mode power_w delay_s energy_j`"));
        }
        let mode: u8 = f[0].parse().map_err(|_| bad(n + 1, "bad mode"))?;
        let nums: Vec<f64> =
            f[1..].iter().map(|x| x.parse::<f64>().map_err(|_| bad(n + 1, "bad number"))).collect::<Result<_>>()?;
        if mode == 0 || nums.iter().any(|x| !x.is_finite() || *x < 0.0) {
            return Err(bad(n + 1, "values must be finite and non-negative"));
        }
        out.push(ParetoSolution {
            mode,
            power_w: nums[0],
            objectives: [nums[1], nums[2]],
            feasible: true,
            violation_db: 0.0,
        });
    }
    if out.is_empty() {
        return Err(bad(0, "no solutions"));
    }
    Ok(out)
}
