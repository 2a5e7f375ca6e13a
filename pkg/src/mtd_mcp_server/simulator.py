"""Deterministic discrete-event run of a scenario.

One ``Simulator`` instance owns a cluster, an attacker ledger and the current
deployment of every microservice. It is single-threaded and not shareable;
independent scenarios run as independent instances.
"""

from __future__ import annotations

import logging
import random
from collections import deque
from typing import Deque, Dict, List, Optional, Set

from .attacker_sim import (
    ArrivalProcess,
    AttackerState,
    close_by_detection,
    close_on_termination,
    dwell_metrics,
    inject_compromise,
    replay_script,
)
from .cluster_sim import (
    ActionKind,
    EventKind,
    EventQueue,
    RegenerationStrategy,
    SimEvent,
    apply_event,
    begin_actions,
    bootstrap_cluster,
    plan_regeneration,
    reconcile,
    schedule_pipeline,
    to_ms,
    to_s,
)
from .risk_engine import (
    evaluate_plan,
    parse_index,
    plan_diversification,
    risk_table,
    service_risk_orrm,
)
from .scenario import (
    AppliedPlan,
    DiversifyTrigger,
    DwellRecord,
    MetricsReport,
    RegenerationTiming,
    ReplayOutcome,
    RiskRow,
    Scenario,
)
from .utils.errors import MtdError
from .vuln_model import ScanReport

logger = logging.getLogger(__name__)


class Simulator:
    def __init__(self, scenario: Scenario, seed: Optional[int] = None):
        self.scenario = scenario
        self.seed = scenario.seed if seed is None else seed
        self.profile = scenario.profile
        self.settings = scenario.settings
        self.horizon_ms = to_ms(scenario.horizon_s)
        # independent streams so that enabling one mechanism does not shift another
        self._cluster_rng = random.Random(f"{self.seed}:cluster")
        self._attack_rng = random.Random(f"{self.seed}:attacker")
        self._plan_rng = random.Random(f"{self.seed}:diversify")

        self.queue = EventQueue()
        self.now_ms = 0
        self.event_log: List[SimEvent] = []
        self.state = bootstrap_cluster(scenario.cluster_size, scenario.container_total)
        self.attacker = AttackerState()
        self.deployment: Dict[str, str] = {
            service: scenario.initial_variant(service) for service in scenario.services
        }
        self.initial_deployment = dict(self.deployment)

        self._targets: Deque[int] = deque()
        self._in_flight = 0
        self._pending: Set[str] = set()
        self._step_started_ms = 0
        self._step_accounted_ms = 0
        self._passes = 0
        self._step_victims: List[str] = []
        self.report = MetricsReport(
            scenario=scenario.name,
            provider=self.profile.name,
            seed=self.seed,
            horizon_s=scenario.horizon_s,
            cluster_size=scenario.cluster_size,
        )

    # -- helpers ----------------------------------------------------------------

    def current_reports(self) -> List[ScanReport]:
        return [
            self.scenario.report_for(service, variant)
            for service, variant in self.deployment.items()
        ]

    def _initial_reports(self) -> List[ScanReport]:
        return [
            self.scenario.report_for(service, variant)
            for service, variant in self.initial_deployment.items()
        ]

    def _schedule(self, at_ms: int, kind: EventKind, **payload) -> None:
        self.queue.push(SimEvent(at_ms, kind, payload.pop("node_id", None), payload))

    # -- setup ------------------------------------------------------------------

    def _seed_events(self) -> None:
        scenario = self.scenario
        if scenario.regeneration is not None:
            self._schedule(0, EventKind.REGEN_TICK)
        if scenario.diversify is not None:
            policy = scenario.diversify
            if policy.trigger == DiversifyTrigger.SCHEDULED:
                self._schedule(to_ms(policy.period_s), EventKind.DIVERSIFY_TICK)
            for at_s in sorted(policy.at_s):
                self._schedule(to_ms(at_s), EventKind.DIVERSIFY_TICK, manual=True)
        attacker = scenario.attacker
        if attacker is not None:
            if attacker.arrival == ArrivalProcess.POISSON:
                self._schedule(self._next_arrival(0), EventKind.COMPROMISE)
            for injection in sorted(attacker.injections, key=lambda i: i.at_s):
                self._schedule(
                    to_ms(injection.at_s), EventKind.COMPROMISE,
                    node_id=injection.node_id, scheduled=True,
                )
            if attacker.scripts:
                self._schedule(0, EventKind.ATTACK_REPLAY)
                if attacker.replay_period_s is None:
                    self._schedule(self.horizon_ms, EventKind.ATTACK_REPLAY)

    def _next_arrival(self, now_ms: int) -> int:
        mean = self.scenario.attacker.interarrival_s
        return now_ms + max(1, to_ms(self._attack_rng.expovariate(1.0 / mean)))

    def _record_risks(self) -> None:
        s = self.settings
        for risk in risk_table(
            self.current_reports(),
            self.scenario.score_table,
            aggregation=s.orrm_aggregation,
            threshold=s.shrinkage_threshold,
            convention=s.shrinkage_convention,
        ):
            self.report.risks.append(RiskRow(
                service=risk.service,
                variant=self.deployment[risk.service],
                method=risk.method.value,
                score=risk.score,
            ))

    # -- regeneration -----------------------------------------------------------

    def _on_regen_tick(self) -> None:
        policy = self.scenario.regeneration
        n = self.scenario.cluster_size
        active = {node.id for node in self.state.active_nodes()}
        self._pending &= active
        if policy.strategy != RegenerationStrategy.ROLLING_ONE or not self._pending:
            self._pending = active
        self._targets.extend(plan_regeneration(policy, n))
        self._advance_regeneration()

    def _advance_regeneration(self) -> None:
        policy = self.scenario.regeneration
        while self._in_flight == 0:
            if not self._targets:
                if not self._pending:
                    self._passes += 1
                self._schedule(self.now_ms + to_ms(policy.cadence_s), EventKind.REGEN_TICK)
                return
            self.state.intended_size = self._targets.popleft()
            growing = self.state.intended_size > self.state.current_size
            actions = reconcile(
                self.state,
                self._cluster_rng,
                candidates=self._pending,
                selection=self.settings.victim_selection,
            )
            if not actions:
                continue
            if growing:
                self._step_started_ms = self.now_ms
                self._step_accounted_ms = self.now_ms
            else:
                self._step_victims = [
                    a.node_id for a in actions if a.kind == ActionKind.DRAIN_AND_TERMINATE
                ]
                self._pending.difference_update(self._step_victims)
            begin_actions(self.state, actions, self.now_ms)
            events = schedule_pipeline(
                actions,
                self.profile,
                self.now_ms,
                parallel=policy.strategy == RegenerationStrategy.DOUBLING,
            )
            self._in_flight = len(events)
            self.queue.extend(events)

    def _on_cluster_event(self, event: SimEvent) -> None:
        if event.kind == EventKind.NODE_TERMINATED:
            close_on_termination(self.attacker, event.node_id, event.at_ms)
        apply_event(self.state, event)
        self.state.check_invariants()
        if event.kind == EventKind.SECGROUP_ADJUSTED and event.payload.get("op") == "revoke":
            self._record_regeneration(event.node_id)
        self._in_flight -= 1
        if self._in_flight == 0 and self.scenario.regeneration is not None:
            self._advance_regeneration()

    def _record_regeneration(self, node_id: str) -> None:
        section = self.report.regeneration
        duration = to_s(self.now_ms - self._step_started_ms)
        section.timings.append(RegenerationTiming(
            node_id=node_id,
            started_at_s=to_s(self._step_started_ms),
            completed_at_s=to_s(self.now_ms),
            duration_s=duration,
        ))
        section.count += 1
        # parallel replacements of one step share its wall time
        section.wall_time_s += to_s(self.now_ms - self._step_accounted_ms)
        self._step_accounted_ms = self.now_ms
        section.last_completed_at_s = to_s(self.now_ms)
        logger.debug("Node %s regenerated in %.3fs", node_id, duration)

    # -- attacker ---------------------------------------------------------------

    def _on_compromise(self, event: SimEvent) -> None:
        attacker = self.scenario.attacker
        if not event.payload.get("scheduled"):
            self._schedule(self._next_arrival(self.now_ms), EventKind.COMPROMISE)
        active = self.state.active_nodes()
        if event.node_id is not None:
            target = self.state.nodes.get(event.node_id)
            if target is None or target not in active:
                logger.debug("Scheduled compromise of %s skipped: node not active", event.node_id)
                return
        elif active:
            target = self._attack_rng.choice(active)
        else:
            return
        if target.compromised and target.id not in self.attacker.open:
            # foothold already present, only detection will end it
            return
        cause = "scheduled" if event.payload.get("scheduled") else "poisson"
        inject_compromise(self.state, self.attacker, target.id, self.now_ms, cause)
        if self.scenario.regeneration is None:
            close_by_detection(self.attacker, target.id, attacker.baseline_detection_s)

    def _on_replay(self) -> None:
        attacker = self.scenario.attacker
        reports = self.current_reports()
        section = self.report.replays
        for script in attacker.scripts:
            result = replay_script(script, reports)
            section.outcomes.append(ReplayOutcome(
                at_s=to_s(self.now_ms),
                script_id=script.id,
                success=result.success,
                matched=len(result.matched),
                missing=len(result.missing),
            ))
            section.attempts += 1
            if result.success:
                section.successes += 1
            else:
                section.failures += 1
        if attacker.replay_period_s is not None:
            self._schedule(self.now_ms + to_ms(attacker.replay_period_s), EventKind.ATTACK_REPLAY)

    # -- diversification --------------------------------------------------------

    def _on_diversify(self, event: SimEvent) -> None:
        policy = self.scenario.diversify
        reports = self.current_reports()
        risks = [
            service_risk_orrm(report, self.scenario.score_table, self.settings.orrm_aggregation)
            for report in reports
        ]
        variants = {service: set(self.scenario.variants_of(service)) for service in self.deployment}
        plan = plan_diversification(
            risks, parse_index(policy.index), variants, self.deployment, self._plan_rng
        )
        self.deployment.update(plan.assignments)
        self.report.diversification.append(AppliedPlan(
            at_s=to_s(self.now_ms),
            index=str(plan.index),
            ranked_services=list(plan.ranked_services),
            assignments=dict(plan.assignments),
            unchanged=list(plan.unchanged),
        ))
        logger.info("Diversified %s at %.0fs", sorted(plan.assignments), to_s(self.now_ms))
        if policy.trigger == DiversifyTrigger.SCHEDULED and not event.payload.get("manual"):
            self._schedule(self.now_ms + to_ms(policy.period_s), EventKind.DIVERSIFY_TICK)

    # -- main loop --------------------------------------------------------------

    def _dispatch(self, event: SimEvent) -> None:
        if event.kind == EventKind.REGEN_TICK:
            self._on_regen_tick()
        elif event.kind == EventKind.COMPROMISE:
            self._on_compromise(event)
        elif event.kind == EventKind.DIVERSIFY_TICK:
            self._on_diversify(event)
        elif event.kind == EventKind.ATTACK_REPLAY:
            self._on_replay()
        else:
            self._on_cluster_event(event)

    def start(self) -> None:
        """Record the initial risk table and queue the first events."""
        if self.scenario.fixtures:
            self._record_risks()
        self._seed_events()

    def step(self) -> SimEvent:
        event = self.queue.pop()
        self.now_ms = event.at_ms
        self.event_log.append(event)
        try:
            self._dispatch(event)
        except MtdError as e:
            e.add_note(f"sim time {to_s(self.now_ms):.3f}s, event {event.kind.value}")
            raise
        return event

    def run(self) -> MetricsReport:
        logger.info(
            "Running %s on %s: N=%d seed=%d horizon=%.0fs",
            self.scenario.name,
            self.profile.name,
            self.scenario.cluster_size,
            self.seed,
            self.scenario.horizon_s,
        )
        self.start()
        while self.queue.peek_time() is not None and self.queue.peek_time() <= self.horizon_ms:
            self.step()
        return self._finish()

    def _finish(self) -> MetricsReport:
        report = self.report
        report.events_processed = len(self.event_log)
        report.availability_losses = self.state.availability_losses
        report.regeneration.strategy = (
            self.scenario.regeneration.strategy.value if self.scenario.regeneration else None
        )
        report.regeneration.passes = self._passes
        closed = sorted(self.attacker.closed, key=lambda r: (r.start_ms, r.node_id))
        report.dwell.records = [
            DwellRecord(
                node_id=r.node_id,
                start_s=r.start_s,
                end_s=r.end_s,
                dwell_s=r.dwell_s,
                cause=r.cause,
            )
            for r in closed
        ]
        report.dwell.open_compromises = len(self.attacker.open)
        if closed:
            report.dwell.stats = dwell_metrics(closed)
        if self.scenario.fixtures:
            report.attack_surface = evaluate_plan(self._initial_reports(), self.current_reports())
        logger.info(
            "Finished %s: %d regenerations, %d closed compromises, %d events",
            self.scenario.name,
            report.regeneration.count,
            len(closed),
            report.events_processed,
        )
        return report.check_consistency()


def run(scenario: Scenario, seed: Optional[int] = None) -> MetricsReport:
    """Run a scenario to its horizon and return its metrics."""
    return Simulator(scenario, seed).run()
