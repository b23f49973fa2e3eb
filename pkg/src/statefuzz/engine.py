"""Campaign orchestration: corpus, coverage feedback, lazy state analysis,
crash triage and the main fuzzing loop."""

from __future__ import annotations

import json
import logging
import random
import time
import zlib
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Optional

from . import calibration as calib
from .calibration import CalibrationConfig, CalibrationResult, EpsilonState
from .coverage import CoverageMap, VirginMap
from .inputs import FuzzInput, Provenance, write_input
from .ipsm import DUMMY_STATE, Ipsm, StaleCorpusError
from .mutation import Dictionary, deterministic_pass, stacked_mutation, trim_input
from .mvptree import StateRegistry
from .runtime import RuntimeState
from .targets import TargetCrash, TargetSpec, UnsupportedMode, make_channel

log = logging.getLogger(__name__)

MODES = ("stateful", "stateless", "response-code")
UNPARSED_CODE = 1000


class CampaignError(RuntimeError):
    pass


@dataclass
class CampaignConfig:
    mode: str = "stateful"
    execs: Optional[int] = None
    duration: Optional[float] = None
    epsilon: Optional[int] = None
    seed: int = 0
    channel: str = "in-process"
    dictionary: Optional[list[bytes]] = None
    reply_timeout: float = 0.05
    hang_timeout: float = 1.0
    deterministic: bool = False
    havoc_rounds: int = 256
    message_weight: float = 4.0
    lazy_analysis: bool = True
    trim: bool = False
    stop_on_crash: bool = False
    calibration: CalibrationConfig = field(default_factory=CalibrationConfig)
    stats_interval: float = 5.0
    stats_every_execs: Optional[int] = None
    out_dir: Optional[Path] = None
    spool: bool = False

    def __post_init__(self):
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {', '.join(MODES)}")
        if self.execs is None and self.duration is None:
            raise ValueError("a budget (execs or duration) is required")


@dataclass
class ExecutionVerdict:
    outcome: str
    coverage: CoverageMap
    new_cov: bool = False
    state_seq: Optional[list[int]] = None
    iteration_messages: Optional[list[int]] = None
    crash: Optional[TargetCrash] = None
    replies: list = field(default_factory=list)
    banner: list = field(default_factory=list)
    reply_timeouts: int = 0
    channel_error: Optional[str] = None
    elapsed: float = 0.0
    runtime: Optional[RuntimeState] = None


@dataclass
class CorpusEntry:
    input_id: int
    input: FuzzInput
    state_seq: Optional[list[int]]
    iteration_messages: Optional[list[int]]
    cov_signature: str
    exec_time: float
    found_at: int
    nondeterministic: bool = False


@dataclass
class CrashReport:
    input: FuzzInput
    crash_site: str
    group_key: str
    bug_id: int
    found_at: int
    count: int = 1


def dedup_crash(bug_id: int, site: str) -> str:
    return f"bug{bug_id:02d}-{zlib.crc32(site.encode()):08x}"


@dataclass
class CampaignReport:
    target: str
    mode: str
    execs: int
    analysis_runs: int
    calibration_execs: int
    replay_execs: int
    corpus: int
    states: int
    transitions: int
    crashes_unique: int
    crash_keys: list[str]
    quarantined: int
    hangs: int
    epsilon: Optional[int]
    epsilon_adjustments: int
    fuzz_seconds: float
    execs_per_sec: float
    first_crash_exec: Optional[int]
    calibration: Optional[dict] = None

    def to_dict(self) -> dict:
        return dict(self.__dict__)

    def summary_line(self) -> str:
        return (f"RESULT target={self.target} mode={self.mode} execs={self.execs} corpus={self.corpus} "
                f"states={self.states} transitions={self.transitions} crashes={self.crashes_unique} "
                f"epsilon={self.epsilon}")


class Engine:
    def __init__(self, spec: TargetSpec, seeds: Iterable[FuzzInput], cfg: CampaignConfig):
        if cfg.mode == "response-code" and not spec.supports_response_codes:
            raise UnsupportedMode(f"target {spec.name} lacks response codes")
        self.spec = spec
        self.seeds = [s.copy() for s in seeds]
        if not self.seeds:
            raise CampaignError("no seed inputs")
        self.cfg = cfg
        self.rng = random.Random(cfg.seed)
        self.channel = make_channel(cfg.channel)
        self.registry = StateRegistry()
        self.ipsm = Ipsm()
        self.virgin = VirginMap()
        self.dictionary = Dictionary(spec.dictionary if cfg.dictionary is None else cfg.dictionary)
        self.corpus: dict[int, CorpusEntry] = {}
        self.crashes: dict[str, CrashReport] = {}
        self.quarantine: list[CrashReport] = []
        self.eps = EpsilonState(cfg.calibration.eps_min)
        self.calibration: Optional[CalibrationResult] = None
        self.execs = 0
        self.analysis_runs = 0
        self.calibration_execs = 0
        self.replay_execs = 0
        self.hangs = 0
        self.first_crash_exec: Optional[int] = None
        self.stats: list[dict] = []
        self._det_done: set[tuple[int, int]] = set()
        self._next_id = 0
        self._cycle = 0
        self._fuzz_time = 0.0
        self._t_start = 0.0
        self._last_stats_t = 0.0
        self._last_stats_execs = 0
        self._stop = False

    @property
    def stateful(self) -> bool:
        return self.cfg.mode == "stateful"

    # -- execution -----------------------------------------------------------

    def execute_input(self, inp: FuzzInput, analysis: bool = False, check_new: bool = True,
                      trace: bool = False) -> ExecutionVerdict:
        """Run one session on a fresh target instance.

        ``analysis`` enables memory snapshots and maps the run to a state
        sequence (or, in response-code mode, reads codes from the replies).
        """
        rt = RuntimeState(snapshots=analysis and self.stateful, spool=self.cfg.spool, trace=trace)
        cov = CoverageMap()
        res = self.channel.run(self.spec, inp.messages, rt, cov, self.cfg.reply_timeout, self.cfg.hang_timeout)
        if res.crash is not None:
            outcome = "crash"
        elif res.hang or res.channel_error:
            outcome = "hang"
            if res.channel_error:
                log.warning("channel failure treated as hang: %s", res.channel_error)
        else:
            outcome = "ok"
        v = ExecutionVerdict(outcome, cov, crash=res.crash, replies=res.replies, banner=res.banner,
                             reply_timeouts=res.reply_timeouts, channel_error=res.channel_error,
                             elapsed=res.elapsed, runtime=rt)
        if check_new and outcome == "ok":
            v.new_cov = self.virgin.has_new_bits(cov) > 0
        if analysis and outcome in ("ok", "crash"):
            if self.stateful:
                v.state_seq = rt.on_process_end(self.registry, self.eps.epsilon)
                v.iteration_messages = list(rt.iteration_messages)
            elif self.cfg.mode == "response-code":
                v.state_seq, v.iteration_messages = self._code_sequence(res.replies)
        return v

    def _code_sequence(self, replies) -> tuple[list[int], list[int]]:
        seq, idx = [], []
        for i, batch in enumerate(replies):
            if batch:
                code = self.spec.response_code(batch[0])
                seq.append(UNPARSED_CODE if code is None else code)
                idx.append(i)
        return seq, idx

    # -- corpus --------------------------------------------------------------

    def _add_entry(self, inp: FuzzInput, v: ExecutionVerdict, nondet: bool = False) -> CorpusEntry:
        entry = CorpusEntry(self._next_id, inp, v.state_seq, v.iteration_messages,
                            v.coverage.signature(), v.elapsed, self.execs, nondet)
        self._next_id += 1
        self.corpus[entry.input_id] = entry
        if self.cfg.out_dir:
            write_input(Path(self.cfg.out_dir) / "queue" / f"id_{entry.input_id:06d}.safl", inp)
        return entry

    def _inputs(self) -> list[FuzzInput]:
        return [e.input for e in self.corpus.values()]

    # -- crash triage ----------------------------------------------------------

    def _handle_crash(self, inp: FuzzInput, crash: TargetCrash) -> None:
        key = dedup_crash(crash.bug_id, crash.site)
        rep = CrashReport(inp, crash.site, key, crash.bug_id, self.execs)
        if key in self.crashes:
            self.crashes[key].count += 1
            return
        again = self.execute_input(inp, check_new=False)
        self.replay_execs += 1
        if again.crash is None or again.crash.site != crash.site:
            log.info("crash %s did not reproduce; quarantined", key)
            self.quarantine.append(rep)
            return
        self.crashes[key] = rep
        if self.first_crash_exec is None:
            self.first_crash_exec = self.execs
        log.info("new crash %s after %d execs", key, self.execs)
        if self.cfg.out_dir:
            d = Path(self.cfg.out_dir) / "crashes" / key
            d.mkdir(parents=True, exist_ok=True)
            write_input(d / f"id_{len(self.crashes) - 1:06d}.safl", inp)
        if self.cfg.stop_on_crash:
            self._stop = True

    # -- verdict processing ------------------------------------------------------

    def process_verdict(self, v: ExecutionVerdict, inp: FuzzInput, target_state: Optional[int] = None) -> bool:
        """Feed one execution back into the campaign; True if ``inp`` was saved."""
        if v.outcome == "crash":
            self._handle_crash(inp, v.crash)
            return False
        if v.outcome == "hang":
            self.hangs += 1
            return False
        if self.cfg.mode == "stateless":
            if not v.new_cov:
                return False
            self._save(inp, v, target_state, [])
            return True
        nondet = False
        if v.state_seq is None:
            if not v.new_cov:
                return False
            va = self.execute_input(inp, analysis=True, check_new=False)
            self.analysis_runs += 1
            if va.outcome != "ok":
                return False
            nondet = va.coverage.signature() != v.coverage.signature()
            if nondet:
                log.debug("analysis re-run diverged from the fuzz run")
            v.state_seq, v.iteration_messages = va.state_seq, va.iteration_messages
        new_states = [s for s in dict.fromkeys(v.state_seq) if s not in self.ipsm.stats]
        if not v.new_cov and not new_states:
            self.ipsm.ingest_sequence(None, v.state_seq, was_interesting=False)
            if self.stateful:
                calib.observe_input_result(self.eps, False, self.cfg.calibration)
            return False
        self._save(inp, v, target_state, new_states, nondet)
        return True

    def _save(self, inp, v, target_state, new_states, nondet=False) -> None:
        if self.cfg.trim:
            inp = self._trim(inp, v)
        entry = self._add_entry(inp, v, nondet)
        if v.state_seq is not None:
            self.ipsm.ingest_sequence(entry.input_id, v.state_seq, was_interesting=True)
        if self.stateful:
            calib.observe_input_result(self.eps, bool(new_states), self.cfg.calibration)
        if target_state is not None:
            self.ipsm.record_path(target_state)

    def _trim(self, inp: FuzzInput, v: ExecutionVerdict) -> FuzzInput:
        want = (v.coverage.signature(), v.state_seq)

        def same(candidate: FuzzInput) -> bool:
            r = self.execute_input(candidate, analysis=v.state_seq is not None, check_new=False)
            self.replay_execs += 1
            return r.outcome == "ok" and (r.coverage.signature(), r.state_seq) == want

        return trim_input(inp, same)

    # -- setup -----------------------------------------------------------------

    def dry_run(self) -> list[FuzzInput]:
        accepted = []
        for i, s in enumerate(self.seeds):
            v = self.execute_input(s, check_new=False)
            self.calibration_execs += 1
            if v.outcome != "ok":
                log.warning("seed %d rejected (%s)", i, v.outcome)
                continue
            accepted.append(s)
        if not accepted:
            raise CampaignError("all seeds crash or hang on the target")
        return accepted

    def calibrate(self, seeds: list[FuzzInput]) -> None:
        if self.stateful:
            def run_hashes(seed: FuzzInput):
                rt = RuntimeState(snapshots=True, spool=self.cfg.spool)
                self.channel.run(self.spec, seed.messages, rt, CoverageMap(),
                                 self.cfg.reply_timeout, self.cfg.hang_timeout)
                self.calibration_execs += 1
                rt.on_process_end(None)
                return rt.digests

            self.calibration = calib.calibrate(seeds, run_hashes, self.cfg.calibration)
            eps = self.calibration.epsilon if self.cfg.epsilon is None else self.cfg.calibration.clamp(self.cfg.epsilon)
            self.eps = EpsilonState(eps)
        for s in seeds:
            v = self.execute_input(s, analysis=self.cfg.mode != "stateless")
            self.calibration_execs += 1
            entry = self._add_entry(s, v)
            if v.state_seq is not None:
                self.ipsm.ingest_sequence(entry.input_id, v.state_seq, was_interesting=True)

    # -- main loop ---------------------------------------------------------------

    def _budget_left(self) -> bool:
        if self._stop:
            return False
        if self.cfg.execs is not None and self.execs >= self.cfg.execs:
            return False
        if self.cfg.duration is not None and time.perf_counter() - self._t_start >= self.cfg.duration:
            return False
        return True

    def _run_one(self, mutant: FuzzInput, target_state: Optional[int]) -> None:
        analysis = not self.cfg.lazy_analysis and self.cfg.mode != "stateless"
        v = self.execute_input(mutant, analysis=analysis)
        self.execs += 1
        if target_state is not None:
            self.ipsm.record_fuzz(target_state)
        self.process_verdict(v, mutant, target_state)
        self._maybe_stats()

    def fuzz_one(self, entry: CorpusEntry, pos: int, target_state: Optional[int]) -> None:
        parent = entry.input.copy()
        parent.provenance = Provenance(entry.input_id, target_state)
        donors = [e.input for e in self.corpus.values() if e.input_id != entry.input_id]
        if self.cfg.deterministic and (entry.input_id, pos) not in self._det_done:
            self._det_done.add((entry.input_id, pos))
            for mutant in deterministic_pass(parent, pos, self.dictionary, donors):
                if not self._budget_left():
                    return
                self._run_one(mutant, target_state)
        corpus_inputs = self._inputs()
        for _ in range(self.cfg.havoc_rounds):
            if not self._budget_left():
                return
            mutant = stacked_mutation(parent, pos, corpus_inputs, self.dictionary, self.rng,
                                      self.cfg.message_weight)
            self._run_one(mutant, target_state)

    def _pick(self) -> tuple[CorpusEntry, int, Optional[int]]:
        # No state holds a live input (e.g. every seed is empty): cycle the queue.
        if self.cfg.mode == "stateless" or not self.ipsm.eligible():
            ids = sorted(self.corpus)
            entry = self.corpus[ids[self._cycle % len(ids)]]
            self._cycle += 1
            pos = self.rng.randrange(max(1, len(entry.input.messages)))
            return entry, pos, None
        while self.ipsm.eligible():
            s = self.ipsm.select_state(self.rng)
            try:
                input_id, pos = self.ipsm.pick_input_and_position(s, self.rng, self.corpus)
            except StaleCorpusError:
                continue
            return self.corpus[input_id], pos, s
        return self._pick()

    def _maybe_stats(self, force: bool = False) -> None:
        now = time.perf_counter()
        if self.cfg.stats_every_execs:
            due = self.execs - self._last_stats_execs >= self.cfg.stats_every_execs
        else:
            due = now - self._last_stats_t >= self.cfg.stats_interval
        if not (due or force) or (force and self.stats and self.stats[-1]["execs"] == self.execs):
            return
        self._last_stats_t = now
        self._last_stats_execs = self.execs
        elapsed = now - self._t_start
        rec = {
            "t": round(elapsed, 3),
            "execs": self.execs,
            "execs_per_sec": round(self.execs / elapsed, 2) if elapsed > 0 else 0.0,
            "corpus": len(self.corpus),
            "states": len(self.ipsm.stats),
            "transitions": len(self.ipsm.transitions),
            "crashes_unique": len(self.crashes),
            "epsilon": self.eps.epsilon if self.stateful else None,
        }
        self.stats.append(rec)
        log.info("stats %s", rec)
        if self.cfg.out_dir:
            with open(Path(self.cfg.out_dir) / "stats.jsonl", "a") as fh:
                fh.write(json.dumps(rec) + "\n")

    def run(self) -> CampaignReport:
        if self.cfg.out_dir:
            out = Path(self.cfg.out_dir)
            (out / "queue").mkdir(parents=True, exist_ok=True)
            (out / "crashes").mkdir(exist_ok=True)
        seeds = self.dry_run()
        self.calibrate(seeds)
        self._t_start = self._last_stats_t = time.perf_counter()
        while self._budget_left():
            entry, pos, s = self._pick()
            self.fuzz_one(entry, pos, s)
        self._fuzz_time = time.perf_counter() - self._t_start
        self._maybe_stats(force=True)
        report = self.report()
        if self.cfg.out_dir:
            self.write_artifacts(report)
        return report

    def report(self) -> CampaignReport:
        t = self._fuzz_time
        return CampaignReport(
            target=self.spec.name,
            mode=self.cfg.mode,
            execs=self.execs,
            analysis_runs=self.analysis_runs,
            calibration_execs=self.calibration_execs,
            replay_execs=self.replay_execs,
            corpus=len(self.corpus),
            states=len(self.ipsm.stats),
            transitions=len(self.ipsm.transitions),
            crashes_unique=len(self.crashes),
            crash_keys=sorted(self.crashes),
            quarantined=len(self.quarantine),
            hangs=self.hangs,
            epsilon=self.eps.epsilon if self.stateful else None,
            epsilon_adjustments=self.eps.adjustments,
            fuzz_seconds=t,
            execs_per_sec=self.execs / t if t > 0 else 0.0,
            first_crash_exec=self.first_crash_exec,
            calibration=self.calibration.report() if self.calibration else None,
        )

    def write_artifacts(self, report: CampaignReport) -> None:
        out = Path(self.cfg.out_dir)
        stamp = time.strftime("%Y%m%d-%H%M%S")
        (out / f"ipsm-{stamp}.dot").write_text(self.ipsm.to_dot())
        (out / "ipsm.json").write_text(self.ipsm.to_json())
        (out / "registry.json").write_text(self.registry.to_json())
        if self.calibration:
            (out / "calibration.json").write_text(json.dumps(self.calibration.report(), indent=1))
        (out / "report.json").write_text(json.dumps(report.to_dict(), indent=1))
        crashes = [{"group_key": k, "bug_id": c.bug_id, "crash_site": c.crash_site, "count": c.count,
                    "found_at": c.found_at} for k, c in sorted(self.crashes.items())]
        (out / "crashes.json").write_text(json.dumps({"unique": crashes,
                                                      "quarantined": [q.group_key for q in self.quarantine]},
                                                     indent=1))


def run_campaign(spec: TargetSpec, seeds: Iterable[FuzzInput], cfg: CampaignConfig) -> tuple[CampaignReport, Engine]:
    engine = Engine(spec, seeds, cfg)
    return engine.run(), engine
