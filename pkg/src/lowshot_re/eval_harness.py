"""Episode-suite evaluation: per-episode accuracy, mean, 95% interval, std."""

from __future__ import annotations

import copy
import csv
import json
import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

from .matching import MatchResult
from .relation_core import Episode
from .training import AdaptConfig, adapt_episode

CI_FORMULA = "ci95=1.96*std/sqrt(T)"
CI_METHOD = "normal-approximation"  # bootstrap is the other plausible reading


class EmptyError(ValueError):
    pass


class EpisodeFailure(RuntimeError):
    def __init__(self, index: int, seed, cause: BaseException):
        super().__init__(f"episode {index} (seed {seed}) failed: {cause}")
        self.index = index
        self.seed = seed


@dataclass
class SuiteResult:
    per_episode: List[float]
    mean: float
    ci: float
    std: float
    setting: Dict[str, object] = field(default_factory=dict)
    runtime: float = 0.0
    degenerate: bool = False  # single episode: ci/std reported as 0

    @property
    def episodes(self) -> int:
        return len(self.per_episode)

    def to_dict(self) -> dict:
        setting = dict(self.setting)
        setting["episodes"] = self.episodes
        setting["T"] = self.episodes
        return {
            "setting": setting,
            "mean": self.mean,
            "ci": self.ci,
            "std": self.std,
            "formula": CI_FORMULA,
            "ci_method": CI_METHOD,
            "degenerate": self.degenerate,
            "per_episode": list(self.per_episode),
        }


def aggregate(accuracies: Sequence[float]) -> Tuple[float, float, float]:
    """(mean, ci, std) with the sample (n-1) std and ci = 1.96 std / sqrt(T)."""
    acc = [float(a) for a in accuracies]
    if not acc:
        raise EmptyError("no accuracies to aggregate")
    T = len(acc)
    mean = math.fsum(acc) / T
    if T == 1:
        return mean, 0.0, 0.0
    std = math.sqrt(math.fsum((a - mean) ** 2 for a in acc) / (T - 1))
    return mean, 1.96 * std / math.sqrt(T), std


def episode_accuracy(results: Sequence[MatchResult]) -> float:
    if not results:
        raise EmptyError("episode has no queries")
    return sum(r.predicted == r.gold for r in results) / len(results)


def _setting(episodes: Sequence[Episode]) -> Dict[str, object]:
    first = episodes[0]
    return {"N": first.n_way, "K": first.k_shot, "nota_rate": first.nota_rate}


def evaluate(
    model,
    episodes: Sequence[Episode],
    adapt: AdaptConfig = AdaptConfig(),
    workers: int = 1,
    keep_results: Optional[List] = None,
) -> SuiteResult:
    """Adapt-and-predict every episode and aggregate query accuracy.

    With ``workers > 1`` each episode adapts a private copy of the model.
    ``keep_results``, if given, receives each episode's MatchResults in order.
    """
    if not episodes:
        raise EmptyError("no episodes to evaluate")
    start = time.perf_counter()

    def run(i: int):
        ep = episodes[i]
        m = copy.deepcopy(model) if workers > 1 else model
        try:
            return adapt_episode(m, ep, adapt).results
        except Exception as exc:  # noqa: BLE001 - re-raised with the episode id
            raise EpisodeFailure(i, ep.seed, exc) from exc

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            per = list(pool.map(run, range(len(episodes))))
    else:
        per = [run(i) for i in range(len(episodes))]
    if keep_results is not None:
        keep_results.extend(per)
    accs = [episode_accuracy(r) for r in per]
    mean, ci, std = aggregate(accs)
    return SuiteResult(accs, mean, ci, std, _setting(episodes), time.perf_counter() - start, len(accs) == 1)


def write_results(result: SuiteResult, path, extra: Optional[dict] = None) -> None:
    """Results JSON; runtime is deliberately left out so reruns are byte-identical."""
    payload = result.to_dict()
    payload.update(extra or {})
    with open(path, "w") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")


def read_results(path) -> dict:
    with open(path) as fh:
        return json.load(fh)


def write_table(rows: Sequence[Tuple[str, SuiteResult]], path) -> None:
    """One row per named suite: acc, ci and std in percent."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["suite", "N", "K", "nota_rate", "episodes", "acc", "ci", "std"])
        for name, r in rows:
            s = r.setting
            w.writerow(
                [name, s.get("N"), s.get("K"), s.get("nota_rate"), r.episodes,
                 f"{100 * r.mean:.2f}", f"{100 * r.ci:.2f}", f"{100 * r.std:.2f}"]
            )
