//! The slot-driven episode engine.

use std::collections::VecDeque;

use rand::Rng;

use super::conflict::{union_length, Interval};
use super::metrics::{compute_metrics, MetricsReport};
use super::{Decision, LocalObservation, NeighborView, Outcome, Scenario, TransmissionEvent};
use crate::channel::{self, Emission, LinkGain};
use crate::error::{Error, Result};
use crate::loadaware::NeighborLoadTable;
use crate::modem::{self, TransmissionMode};
use crate::policies::Policy;
use crate::seed::{self, stream, SimRng};
use crate::world::{self, NodeId, NodeState, PhyStatus, Position};

/// Outcome counts of the receptions the sink resolved during one slot.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct SlotReport {
    pub slot: usize,
    /// Transmissions started this slot.
    pub sent: usize,
    pub received: usize,
    pub conflicts: usize,
    pub sinr_failures: usize,
}

/// Per-node energy over the observation window.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct NodeEnergy {
    pub tx_j: f64,
    pub recv_j: f64,
    pub idle_j: f64,
    /// Transmit time inside the window.
    pub send_s: f64,
    pub recv_s: f64,
    pub idle_s: f64,
    /// Battery left after the episode, floored at zero.
    pub battery_j: f64,
}

impl NodeEnergy {
    pub fn total_j(&self) -> f64 {
        self.tx_j + self.recv_j + self.idle_j
    }
}

/// Everything an episode produced.
#[derive(Clone, Debug)]
pub struct EpisodeResult {
    pub metrics: MetricsReport,
    pub events: Vec<TransmissionEvent>,
    /// Transmitters in id order.
    pub energy: Vec<NodeEnergy>,
    pub sink_energy: NodeEnergy,
    pub slots: Vec<SlotReport>,
}

impl EpisodeResult {
    /// Checks delivery-ratio and utilization bounds, outcome counts against
    /// per-slot reports, and that each node's send, receive and idle time
    /// partition the window.
    pub fn check_invariants(&self, horizon_s: f64) -> Result<()> {
        let fail = |what: String| Err(Error::Invariant(what));
        let m = &self.metrics;
        let tol = 1e-9 * horizon_s.max(1.0);
        if let Some(d) = m.delivery_ratio {
            if (d * m.sent_count as f64 - m.received_count as f64).abs() > 1e-9 * m.sent_count as f64 {
                return fail(format!(
                    "delivery ratio {d} times {} sent is not {} received",
                    m.sent_count, m.received_count
                ));
            }
        } else if m.sent_count != 0 {
            return fail("delivery ratio missing although packets were sent".into());
        }
        if !(0.0..=1.0 + 1e-12).contains(&m.channel_utilization) {
            return fail(format!("utilization {} outside [0, 1]", m.channel_utilization));
        }
        let outcomes = m.received_count + m.conflict_count + m.sinr_fail_count + m.pending_count;
        if outcomes != m.sent_count || m.sent_count != self.events.len() {
            return fail(format!("{outcomes} outcomes for {} sent packets", m.sent_count));
        }
        let slot_recv: usize = self.slots.iter().map(|s| s.received).sum();
        let slot_sent: usize = self.slots.iter().map(|s| s.sent).sum();
        if slot_recv != m.received_count || slot_sent != m.sent_count {
            return fail("per-slot counts disagree with the event log".into());
        }
        for (i, e) in self.energy.iter().chain(std::iter::once(&self.sink_energy)).enumerate() {
            let parts = [e.send_s, e.recv_s, e.idle_s];
            if parts.iter().any(|&x| x < -tol) || (parts.iter().sum::<f64>() - horizon_s).abs() > tol {
                return fail(format!("node {i} time budget {parts:?} does not sum to {horizon_s}"));
            }
        }
        Ok(())
    }
}

/// A packet's reception interval at one overhearing transmitter.
#[derive(Clone, Copy, Debug)]
struct Incoming {
    event: usize,
    span: Interval,
    settled: bool,
}

/// One episode of the discrete-event simulation.
///
/// Call [`Simulation::observe`] and [`Simulation::step`] once per slot, then
/// [`Simulation::finish`].
pub struct Simulation {
    scenario: Scenario,
    nodes: Vec<NodeState>,
    tables: Vec<NeighborLoadTable>,
    annex_bytes: Vec<u32>,
    events: Vec<TransmissionEvent>,
    resolved_upto: usize,
    max_span: f64,
    /// Sending interval `[t_send, t_send + δ_tx]` per transmitter.
    sending: Vec<Vec<Interval>>,
    /// Receptions at each transmitter that may still matter for overhearing.
    incoming: Vec<VecDeque<Incoming>>,
    /// Every reception interval at each transmitter, for energy accounting.
    heard: Vec<Vec<Interval>>,
    fresh: Vec<bool>,
    slot: usize,
    slot_begun: bool,
    slots: Vec<SlotReport>,
    traffic_rng: SimRng,
    fading_rng: SimRng,
    mobility_rng: SimRng,
    dropout_rng: SimRng,
}

impl Simulation {
    /// `annex_bytes[i]` is the header overhead transmitter `i` adds to each packet.
    pub fn new(scenario: &Scenario, seed: u64, annex_bytes: &[u32]) -> Result<Self> {
        scenario.validate()?;
        let n = scenario.n_transmitters();
        if annex_bytes.len() != n {
            return Err(Error::Shape { expected: n, actual: annex_bytes.len() });
        }
        let nodes = scenario
            .positions
            .iter()
            .enumerate()
            .map(|(i, &p)| NodeState::new(i, p, scenario.battery_j, scenario.kappa))
            .collect();
        Ok(Self {
            scenario: scenario.clone(),
            nodes,
            tables: vec![NeighborLoadTable::new(); n],
            annex_bytes: annex_bytes.to_vec(),
            events: Vec::new(),
            resolved_upto: 0,
            max_span: 0.0,
            sending: vec![Vec::new(); n],
            incoming: vec![VecDeque::new(); n],
            heard: vec![Vec::new(); n],
            fresh: vec![true; n],
            slot: 0,
            slot_begun: false,
            slots: Vec::with_capacity(scenario.horizon_slots),
            traffic_rng: seed::rng(seed, &[stream::TRAFFIC]),
            fading_rng: seed::rng(seed, &[stream::FADING]),
            mobility_rng: seed::rng(seed, &[stream::MOBILITY]),
            dropout_rng: seed::rng(seed, &[stream::DROPOUT]),
        })
    }

    pub fn scenario(&self) -> &Scenario {
        &self.scenario
    }

    pub fn slot(&self) -> usize {
        self.slot
    }

    pub fn now(&self) -> f64 {
        self.slot as f64 * self.scenario.slot_s
    }

    pub fn is_done(&self) -> bool {
        self.slot >= self.scenario.horizon_slots
    }

    pub fn events(&self) -> &[TransmissionEvent] {
        &self.events
    }

    pub fn node(&self, id: NodeId) -> &NodeState {
        &self.nodes[id]
    }

    fn begin_slot(&mut self) -> Result<()> {
        if self.slot_begun {
            return Ok(());
        }
        let now = self.now();
        let dt = self.scenario.slot_s;
        if self.slot > 0 {
            for node in &mut self.nodes {
                node.position = world::step_mobility(node.position, &self.scenario.drift, dt, &mut self.mobility_rng);
            }
            for node in &mut self.nodes {
                let arrivals = world::generate_traffic(
                    self.scenario.per_node_rate,
                    self.scenario.payload_bytes,
                    (now - dt, now),
                    &mut self.traffic_rng,
                )?;
                for p in arrivals {
                    node.enqueue(p);
                }
            }
        }
        self.deliver_overheard(now);
        for i in 0..self.nodes.len() {
            self.nodes[i].phy_status = self.phy_status(i, now);
            let u: f64 = self.dropout_rng.random();
            self.fresh[i] = u >= self.scenario.observation_dropout;
        }
        self.slot_begun = true;
        Ok(())
    }

    /// Hands load annexes of cleanly overheard packets to each transmitter's table.
    ///
    /// A packet is overheard when no other packet overlaps it at the listener
    /// and the listener is not transmitting meanwhile. Only receptions that
    /// ended strictly before `now` are settled, so no later transmission can
    /// still change the verdict.
    fn deliver_overheard(&mut self, now: f64) {
        let horizon = self.scenario.slot_s + self.max_span;
        for j in 0..self.incoming.len() {
            for k in 0..self.incoming[j].len() {
                let inc = self.incoming[j][k];
                if inc.settled || inc.span.end >= now {
                    continue;
                }
                let collided = self.incoming[j].iter().enumerate().any(|(m, o)| m != k && o.span.overlaps(&inc.span));
                let deaf = self.sending[j]
                    .iter()
                    .rev()
                    .take_while(|s| s.start + self.max_span >= inc.span.start)
                    .any(|s| s.overlaps(&inc.span));
                if !(collided || deaf) {
                    let ev = &self.events[inc.event];
                    if let Some(info) = ev.annex {
                        self.tables[j].ingest_overheard(ev.sender, info);
                    }
                }
                self.incoming[j][k].settled = true;
            }
            // settled receptions this old can no longer overlap an unsettled one
            let queue = &mut self.incoming[j];
            while queue.front().is_some_and(|o| o.settled && o.span.end < now - horizon) {
                queue.pop_front();
            }
        }
    }

    fn phy_status(&self, i: NodeId, t: f64) -> PhyStatus {
        if self.sending[i].last().is_some_and(|s| s.start <= t && t < s.end) {
            PhyStatus::Send
        } else if self.incoming[i].iter().any(|inc| inc.span.start <= t && t < inc.span.end) {
            PhyStatus::Recv
        } else {
            PhyStatus::Idle
        }
    }

    /// Per-transmitter local observations at the current slot boundary.
    pub fn observe(&mut self) -> Result<Vec<LocalObservation>> {
        self.begin_slot()?;
        let now = self.now();
        let n = self.nodes.len();
        let mut out = Vec::with_capacity(n);
        for i in 0..n {
            let ids: Vec<NodeId> = (0..n).filter(|&j| j != i).collect();
            let infos = self.tables[i].build_overhear_matrix(&ids, now, self.scenario.confidence_scale_s)?;
            let neighbors = ids
                .iter()
                .zip(infos)
                .map(|(&id, info)| NeighborView { id, position: self.nodes[id].position, info })
                .collect();
            let node = &self.nodes[i];
            out.push(LocalObservation {
                node: i,
                n_transmitters: n,
                slot: self.slot,
                time_s: now,
                phy_status: node.phy_status,
                position: node.position,
                local: node.load_info(now, self.scenario.kappa),
                neighbors,
                fresh: self.fresh[i],
            });
        }
        Ok(out)
    }

    /// Applies one decision per transmitter, resolves every reception that
    /// completes within this slot, and advances the clock.
    pub fn step(&mut self, decisions: &[Decision]) -> Result<SlotReport> {
        if self.is_done() {
            return Err(Error::Config("episode already finished".into()));
        }
        if decisions.len() != self.nodes.len() {
            return Err(Error::Shape { expected: self.nodes.len(), actual: decisions.len() });
        }
        self.begin_slot()?;
        let now = self.now();
        let mut report = SlotReport { slot: self.slot, ..SlotReport::default() };
        for (i, d) in decisions.iter().enumerate() {
            if let Decision::Transmit { mode, power_w } = *d {
                if self.transmit(i, mode, power_w, now)? {
                    report.sent += 1;
                }
            }
        }
        self.resolve_until(now + self.scenario.slot_s, &mut report);
        self.slots.push(report);
        self.slot += 1;
        self.slot_begun = false;
        Ok(report)
    }

    /// Starts a transmission; returns `false` when there is nothing to send,
    /// the modem is still busy, or the battery cannot cover it.
    fn transmit(&mut self, i: NodeId, mode_index: u8, power_w: f64, now: f64) -> Result<bool> {
        let modes = &self.scenario.modes;
        let mode = modes
            .get(mode_index)
            .ok_or(Error::ActionOutOfRange { index: usize::from(mode_index), size: modes.len() })?
            .clone();
        if !self.scenario.power.contains(power_w) {
            return Err(Error::Domain(format!(
                "transmit power {power_w} W outside [{}, {}] W",
                self.scenario.power.min_tx_w, self.scenario.power.max_tx_w
            )));
        }
        if self.nodes[i].queue.is_empty() || self.sending[i].last().is_some_and(|s| s.end > now) {
            return Ok(false);
        }
        let data_bytes = self.nodes[i].queue[0].payload_bytes;
        let bytes = data_bytes + self.annex_bytes[i];
        let energy = modem::tx_energy(power_w, bytes, &mode, &self.scenario.framing, &self.scenario.power)?;
        if energy > self.nodes[i].battery_j {
            return Ok(false);
        }
        let packet = self.nodes[i].dequeue().expect("queue checked non-empty");
        self.nodes[i].battery_j -= energy;
        let annex = (self.annex_bytes[i] > 0).then(|| self.nodes[i].load_info(now, self.scenario.kappa));
        let tx = modem::tx_duration(bytes, &mode, &self.scenario.framing)?;
        let pos = self.nodes[i].position;
        let sink = self.scenario.sink_id();
        let prop = self.scenario.delay.delay(i, &pos, sink, &self.scenario.sink)?;
        let loss = channel::transmission_loss(pos.distance(&self.scenario.sink) / 1000.0, &self.scenario.channel)?;
        let rho = if self.scenario.fading { channel::sample_fading(&mut self.fading_rng) } else { 1.0 };
        let gain = LinkGain::new(loss, rho);
        let idx = self.events.len();
        self.events.push(TransmissionEvent {
            sender: i,
            t_send: now,
            t_arrive: now + prop,
            t_complete: now + prop + tx,
            mode: mode.index,
            power_w,
            payload_bytes: bytes,
            data_bytes,
            generated_at: packet.generated_at,
            fading_coeff: rho,
            channel_gain: gain.channel_gain,
            energy_j: energy,
            outcome: Outcome::Pending,
            annex,
        });
        self.max_span = self.max_span.max(prop + tx);
        self.sending[i].push(Interval::new(now, now + tx));
        for j in 0..self.nodes.len() {
            if j == i {
                continue;
            }
            let pj = self.nodes[j].position;
            let d = self.scenario.delay.delay(i, &pos, j, &pj)?;
            let span = Interval::new(now + d, now + d + tx);
            self.incoming[j].push_back(Incoming { event: idx, span, settled: false });
            self.heard[j].push(span);
        }
        Ok(true)
    }

    /// Settles every pending event whose reception completes before `until`.
    fn resolve_until(&mut self, until: f64, report: &mut SlotReport) {
        for k in self.resolved_upto..self.events.len() {
            if self.events[k].outcome != Outcome::Pending || self.events[k].t_complete >= until {
                continue;
            }
            let rx = self.events[k].reception();
            let overlapping = self.overlapping(k, rx);
            let interferers: Vec<&TransmissionEvent> = overlapping.iter().map(|&j| &self.events[j]).collect();
            let mode = self.scenario.modes.get(self.events[k].mode).expect("mode validated at send");
            let outcome = resolve_reception(&self.events[k], &interferers, &self.scenario.channel, mode);
            match outcome {
                Outcome::Received => report.received += 1,
                Outcome::Conflict => report.conflicts += 1,
                Outcome::SinrFail => report.sinr_failures += 1,
                Outcome::Pending => {}
            }
            self.events[k].outcome = outcome;
        }
        while self.resolved_upto < self.events.len() && self.events[self.resolved_upto].outcome != Outcome::Pending {
            self.resolved_upto += 1;
        }
    }

    /// Indices of events whose sink reception overlaps `rx`, excluding `k`.
    ///
    /// Events are stored in send order, and any overlapping event must have
    /// been sent no earlier than `rx.start − max_span`.
    fn overlapping(&self, k: usize, rx: Interval) -> Vec<usize> {
        let earliest = rx.start - self.max_span;
        let mut out = Vec::new();
        for j in (0..self.events.len()).rev() {
            let e = &self.events[j];
            if e.t_send < earliest {
                break;
            }
            if j != k && e.reception().overlaps(&rx) {
                out.push(j);
            }
        }
        out
    }

    /// Closes the episode: packets still in flight stay pending, and idle and
    /// receive energy are charged over the window.
    pub fn finish(mut self) -> EpisodeResult {
        let horizon = self.scenario.horizon_s();
        let p = &self.scenario.power;
        let mut energy = Vec::with_capacity(self.nodes.len());
        for i in 0..self.nodes.len() {
            let send_s = union_length(&self.sending[i], 0.0, horizon);
            let mut busy: Vec<Interval> = self.sending[i].clone();
            busy.extend_from_slice(&self.heard[i]);
            let busy_s = union_length(&busy, 0.0, horizon);
            let recv_s = busy_s - send_s;
            let idle_s = horizon - busy_s;
            let tx_j: f64 = self.events.iter().filter(|e| e.sender == i).map(|e| e.energy_j).sum();
            let recv_j = p.recv_w * recv_s;
            let idle_j = p.idle_w * idle_s;
            let battery_j = (self.nodes[i].battery_j - recv_j - idle_j).max(0.0);
            self.nodes[i].battery_j = battery_j;
            energy.push(NodeEnergy { tx_j, recv_j, idle_j, send_s, recv_s, idle_s, battery_j });
        }
        let sink_rx: Vec<Interval> = self.events.iter().map(|e| e.reception()).collect();
        let recv_s = union_length(&sink_rx, 0.0, horizon);
        let sink_energy = NodeEnergy {
            tx_j: 0.0,
            recv_j: p.recv_w * recv_s,
            idle_j: p.idle_w * (horizon - recv_s),
            send_s: 0.0,
            recv_s,
            idle_s: horizon - recv_s,
            battery_j: f64::INFINITY,
        };
        let metrics = compute_metrics(&self.events, &energy, horizon);
        EpisodeResult { metrics, events: self.events, energy, sink_energy, slots: self.slots }
    }
}

/// Sink verdict for one reception: any overlap is a conflict; otherwise the
/// SINR against all temporally overlapping transmissions decides.
pub fn resolve_reception(
    event: &TransmissionEvent,
    overlapping: &[&TransmissionEvent],
    params: &channel::ChannelParams,
    mode: &TransmissionMode,
) -> Outcome {
    if !overlapping.is_empty() {
        return Outcome::Conflict;
    }
    let me = Emission { power_w: event.power_w, gain: event.channel_gain };
    if event.power_w > 0.0 && channel::decodes(channel::sinr(me, &[], params), mode) {
        Outcome::Received
    } else {
        Outcome::SinrFail
    }
}

/// Runs one full episode with one policy per transmitter.
pub fn run_episode(policies: &mut [Box<dyn Policy>], scenario: &Scenario, seed: u64) -> Result<EpisodeResult> {
    let n = scenario.n_transmitters();
    if policies.len() != n {
        return Err(Error::Config(format!("{} policies supplied for {n} transmitters", policies.len())));
    }
    let annex: Vec<u32> = policies.iter().map(|p| p.annex_bytes()).collect();
    let mut sim = Simulation::new(scenario, seed, &annex)?;
    let mut rngs: Vec<SimRng> = (0..n).map(|i| seed::rng(seed, &[stream::POLICY, i as u64])).collect();
    for p in policies.iter_mut() {
        p.reset();
    }
    while !sim.is_done() {
        let obs = sim.observe()?;
        let decisions = policies
            .iter_mut()
            .zip(obs.iter())
            .zip(rngs.iter_mut())
            .map(|((p, o), r)| p.decide(o, r))
            .collect::<Result<Vec<_>>>()?;
        sim.step(&decisions)?;
    }
    let result = sim.finish();
    result.check_invariants(scenario.horizon_s())?;
    Ok(result)
}

/// Lowest power at which `mode` meets its threshold for a sole sender at
/// `distance_m` with `ρ = 1`, or `None` if even full power falls short.
pub fn min_power_for(mode: &TransmissionMode, distance_m: f64, scenario: &Scenario) -> Result<Option<f64>> {
    let h = channel::transmission_loss(distance_m / 1000.0, &scenario.channel)?;
    let unit = channel::sinr(Emission { power_w: 1.0, gain: h }, &[], &scenario.channel);
    let p = channel::db_to_linear(mode.threshold_db) / unit;
    let p = p.max(scenario.power.min_tx_w);
    Ok((p <= scenario.power.max_tx_w).then_some(p))
}

/// Distance from each transmitter to the sink in metres.
pub fn sink_distances(scenario: &Scenario) -> Vec<f64> {
    scenario.positions.iter().map(|p: &Position| p.distance(&scenario.sink)).collect()
}
