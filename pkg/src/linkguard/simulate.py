"""Synthetic linking worlds: catalogs, planted-error generators, oracles.

Everything here is deterministic under the config seed. A world owns a
catalog, a list of instances (ground-truth tables/columns plus a pre-planned
generation with planted deviations), and factories for the steppable models,
oracle responder, noisy surrogate, and oracle detector that the runtime and
the evaluation harness consume.

The steppable model emits the planned ground-truth token at each position
unless a deviation is planted there, in which case it emits a confusable
alternative that stays inside the constrained vocabulary (a sibling trie
continuation, e.g. another table's first token). Off the ground-truth path it
finishes the name it started, then continues with the remaining planned names.
Hidden states are class-conditional Gaussians: non-deviating emissions draw
from a zero-mean unit ball, deviating ones are shifted by that layer's
separation along a fixed direction, and two layers default to zero separation
so layer selection has something to reject. The simulated next-token
probability is pinned near one for correct and incorrect emissions alike.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Callable, Sequence

import numpy as np

from .catalog import Namespace, SchemaCatalog, build_catalog
from .runtime import decode
from .traces import GenerationTrace, StepOutput, find_branching_points

_CONSONANTS = "bdfgklmnprstvz"
_VOWELS = "aeiou"


def _syllable_pool() -> list[str]:
    return [c1 + v + c2 for c1 in _CONSONANTS for v in _VOWELS for c2 in _CONSONANTS]


@dataclass(frozen=True)
class SimConfig:
    """Knobs for one synthetic world; every field has a frozen desk-scale default."""

    num_tables: int = 8
    columns_min: int = 2
    columns_max: int = 5
    confusability: float = 0.5
    n_layers: int = 7
    dim: int = 16
    separation: float = 5.0
    noisy_layers: int = 2
    layer_separation: tuple[float, ...] | None = None
    layer_correlation: float = 0.9  # shared per-token hardness across layers
    p_err: float = 0.10
    max_branches: int = 3
    surrogate_accuracy_tables: float = 0.9237
    surrogate_accuracy_columns: float = 0.9406
    difficulty_spread: float = 0.0
    min_gt_tables: int = 1
    max_gt_tables: int = 3
    seed: int = 0

    def __post_init__(self) -> None:
        if not 0.0 <= self.p_err < 1.0:
            raise ValueError(f"p_err must be in [0, 1), got {self.p_err}")
        if not 0.0 < self.surrogate_accuracy_tables <= 1.0:
            raise ValueError("surrogate table accuracy must be in (0, 1]")
        if not 0.0 < self.surrogate_accuracy_columns <= 1.0:
            raise ValueError("surrogate column accuracy must be in (0, 1]")
        if self.layer_separation is not None and any(d < 0 for d in self.layer_separation):
            raise ValueError("layer separations must be nonnegative")
        if not 0.0 <= self.layer_correlation <= 1.0:
            raise ValueError("layer_correlation must be in [0, 1]")

    def deltas(self) -> np.ndarray:
        """Per-layer class separation; the last `noisy_layers` layers carry none."""
        if self.layer_separation is not None:
            if len(self.layer_separation) != self.n_layers:
                raise ValueError("layer_separation length must equal n_layers")
            return np.asarray(self.layer_separation, dtype=np.float64)
        deltas = np.full(self.n_layers, self.separation, dtype=np.float64)
        if self.noisy_layers:
            deltas[self.n_layers - self.noisy_layers :] = 0.0
        return deltas

    def to_dict(self) -> dict:
        out = {k: getattr(self, k) for k in self.__dataclass_fields__}
        if out["layer_separation"] is not None:
            out["layer_separation"] = list(out["layer_separation"])
        return out

    @classmethod
    def from_dict(cls, payload: dict) -> "SimConfig":
        fields = {k: payload[k] for k in payload if k in cls.__dataclass_fields__}
        if fields.get("layer_separation") is not None:
            fields["layer_separation"] = tuple(fields["layer_separation"])
        return cls(**fields)


def generate_catalog(config: SimConfig) -> SchemaCatalog:
    """Deterministic per seed; confusability shares first syllables between names."""
    rng = np.random.default_rng([config.seed, 0])
    pool = _syllable_pool()
    order = rng.permutation(len(pool))
    cursor = iter(order)

    def fresh() -> str:
        try:
            return pool[next(cursor)]
        except StopIteration:  # pragma: no cover - pool is far larger than any config
            raise ValueError("syllable pool exhausted")

    tables: list[tuple[str, list[str]]] = []
    first_syllables: list[str] = []
    for t in range(config.num_tables):
        if t > 0 and rng.random() < config.confusability:
            first = first_syllables[int(rng.integers(0, t))]
        else:
            first = fresh()
        first_syllables.append(first)
        name = first + fresh() + fresh()
        n_cols = int(rng.integers(config.columns_min, config.columns_max + 1))
        columns: list[str] = []
        col_firsts: list[str] = []
        for c in range(n_cols):
            if c > 0 and rng.random() < config.confusability:
                col_first = col_firsts[int(rng.integers(0, c))]
            else:
                col_first = fresh()
            col_firsts.append(col_first)
            columns.append(col_first + fresh())
        tables.append((name, columns))
    return build_catalog(tables)


@dataclass(frozen=True)
class GenPlan:
    """Planned ground-truth token path with deviations planted along it."""

    gt_tokens: tuple[int, ...]
    planted: dict[int, int]  # position -> deviating token emitted there

    @property
    def planted_positions(self) -> list[int]:
        return sorted(self.planted)


def plan_generation(
    namespace: Namespace,
    gt_names: Sequence[str],
    p_err: float,
    max_branches: int,
    rng: np.random.Generator,
) -> GenPlan:
    """Lay out gt tokens (names, separators, trailing eos) and plant deviations.

    A deviation is only planted where the trie offers an alternative
    continuation, so every emitted token stays decodable; after a planted
    deviation later positions keep their independent per-token chance.
    """
    tokens: list[int] = []
    for pos, name in enumerate(gt_names):
        if pos:
            tokens.append(namespace.separator_id)
        tokens.extend(namespace.tokenize(name))
    tokens.append(namespace.eos_id)

    planted: dict[int, int] = {}
    node = namespace.trie.root
    for i, tok in enumerate(tokens):
        if tok == namespace.separator_id or tok == namespace.eos_id:
            node = namespace.trie.root
            continue
        alternatives = sorted(t for t in node.children if t != tok)
        if alternatives and len(planted) < max_branches and rng.random() < p_err:
            planted[i] = int(alternatives[int(rng.integers(0, len(alternatives)))])
        node = node.children[tok]
    return GenPlan(tuple(tokens), planted)


@dataclass
class SimInstance:
    index: int
    question: str
    gt_tables: tuple[str, ...]
    gt_columns: dict[str, tuple[str, ...]]
    difficulty: float
    table_plan: GenPlan
    column_plans: dict[str, GenPlan] = field(default_factory=dict)

    @property
    def planted_positions(self) -> list[int]:
        return self.table_plan.planted_positions


class SimModel:
    """Deterministic steppable generator following a plan with planted deviations."""

    def __init__(
        self,
        namespace: Namespace,
        gt_names: Sequence[str],
        plan: GenPlan,
        hidden_seed: Sequence[int],
        deltas: np.ndarray,
        dim: int,
        layer_correlation: float = 0.8,
    ) -> None:
        self.namespace = namespace
        self.gt_names = list(gt_names)
        self.plan = plan
        self.gt = list(plan.gt_tokens)
        self.hidden_seed = tuple(int(s) for s in hidden_seed)
        self.deltas = np.asarray(deltas, dtype=np.float64)
        self.dim = int(dim)
        self.layer_correlation = float(layer_correlation)
        self._direction = np.ones(self.dim) / np.sqrt(self.dim)

    # -- plan following -----------------------------------------------------

    def _on_track(self, prefix: Sequence[int]) -> bool:
        i = len(prefix)
        return i <= len(self.gt) and list(prefix) == self.gt[:i]

    def _completion_token(self, suffix_tokens: Sequence[int]) -> int | None:
        node = self.namespace.trie.walk(suffix_tokens)
        if node is None or not node.children:
            return None
        return min(node.children)

    def _intended_next(self, prefix: Sequence[int]) -> int:
        ns = self.namespace
        i = len(prefix)
        if self._on_track(prefix):
            return self.gt[i] if i < len(self.gt) else ns.eos_id
        state = decode(prefix, ns)
        if state.suffix_tokens:
            suffix = list(state.suffix_tokens)
            # stay with a planned name when the partial still matches one
            for name in (n for n in self.gt_names if n not in state.names):
                toks = ns.tokenize(name)
                if len(suffix) < len(toks) and toks[: len(suffix)] == suffix:
                    return toks[len(suffix)]
            nxt = self._completion_token(suffix)
            return nxt if nxt is not None else ns.eos_id
        remaining = [n for n in self.gt_names if n not in state.names]
        last = prefix[-1] if prefix else None
        if last is None or last == ns.separator_id:
            if remaining:
                return ns.tokenize(remaining[0])[0]
            return ns.eos_id
        if last == ns.eos_id:
            return ns.eos_id
        return ns.separator_id if remaining else ns.eos_id

    def branch_truth(self, prefix: Sequence[int], token: int) -> bool:
        """Whether emitting ``token`` here deviates from the ground-truth path."""
        i = len(prefix)
        return self._on_track(prefix) and i < len(self.gt) and token != self.gt[i]

    # -- emission -------------------------------------------------------------

    def _draw(self, position: int, branch: bool) -> tuple[np.ndarray, float]:
        """Class-conditional hidden states with a shared per-token hardness latent.

        Along the signal direction every layer sees mean ``delta_j`` for a
        deviating emission and 0 otherwise, with unit variance; a common latent
        couples the layers so the same token looks hard (or easy) to all of
        them, the way one residual stream feeds every probe.
        """
        rng = np.random.default_rng(self.hidden_seed + (position, int(branch)))
        n = len(self.deltas)
        gamma = self.layer_correlation
        hardness = rng.standard_normal()
        noise = rng.standard_normal((n, self.dim))
        along = rng.standard_normal(n)
        e = self._direction
        coord = (
            (self.deltas if branch else 0.0)
            + gamma * hardness
            + np.sqrt(max(0.0, 1.0 - gamma * gamma)) * along
        )
        hidden = noise - (noise @ e)[:, None] * e[None, :] + coord[:, None] * e[None, :]
        top_prob = 0.95 + 0.05 * rng.random()  # skewed near 1 either way
        return hidden.astype(np.float32), float(top_prob)

    def step(self, prefix: Sequence[int]) -> StepOutput:
        i = len(prefix)
        if self._on_track(prefix) and i in self.plan.planted:
            token = self.plan.planted[i]
            branch = True
        else:
            token = self._intended_next(prefix)
            branch = self.branch_truth(prefix, token)
        hidden, top_prob = self._draw(i, branch)
        return StepOutput(int(token), hidden, top_prob)


def surrogate_answer(truth: bool, accuracy: float, rng: np.random.Generator) -> str:
    """The truthful verdict with probability ``accuracy``, otherwise flipped."""
    value = truth if rng.random() < accuracy else not truth
    return "True" if value else "False"


@dataclass
class SimSurrogate:
    """Noisy relevance classifier with per-kind accuracy; verdicts "True"/"False"."""

    instance: SimInstance
    accuracy_tables: float
    accuracy_columns: float
    rng: np.random.Generator

    def relevance(self, subject: str, question: str, kind: str, scope: str | None = None) -> str:
        if kind == "table":
            truth = subject in self.instance.gt_tables
            accuracy = self.accuracy_tables
        else:
            truth = scope is not None and subject in self.instance.gt_columns.get(scope, ())
            accuracy = self.accuracy_columns
        return surrogate_answer(truth, accuracy, self.rng)


@dataclass
class OracleResponder:
    """Answers from the instance's ground truth; always consistent with the plan."""

    instance: SimInstance

    def relevance(self, kind: str, subject: str, context: dict) -> str:
        if kind == "confirm_table":
            return "yes" if subject in self.instance.gt_tables else "no"
        scope = context.get("scope")
        return "yes" if subject in self.instance.gt_columns.get(scope, ()) else "no"

    def provide(self, kind: str, context: dict) -> str:
        linked = context.get("linked_so_far", [])
        if kind == "request_table":
            want: Sequence[str] = self.instance.gt_tables
        else:
            want = self.instance.gt_columns.get(context.get("scope"), ())
        for name in want:
            if name not in linked:
                return name
        return want[-1] if want else ""


class SimWorld:
    """A catalog plus instances and every factory the pipeline needs."""

    def __init__(self, config: SimConfig, n_instances: int) -> None:
        self.config = config
        self.catalog = generate_catalog(config)
        self.table_namespace = self.catalog.table_namespace()
        self._column_namespaces = {
            name: self.catalog.column_namespace(name) for name in self.catalog.table_names
        }
        self.instances = [self._build_instance(i) for i in range(n_instances)]

    # -- construction -------------------------------------------------------

    def _build_instance(self, index: int) -> SimInstance:
        cfg = self.config
        rng = np.random.default_rng([cfg.seed, 1, index])
        names = self.catalog.table_names
        n_gt = int(rng.integers(cfg.min_gt_tables, min(cfg.max_gt_tables, len(names)) + 1))
        chosen = sorted(rng.choice(len(names), size=n_gt, replace=False).tolist())
        gt_tables = tuple(names[j] for j in chosen)
        gt_columns: dict[str, tuple[str, ...]] = {}
        for table in gt_tables:
            cols = self.catalog.columns_of(table)
            n_c = int(rng.integers(1, len(cols) + 1))
            picked = sorted(rng.choice(len(cols), size=n_c, replace=False).tolist())
            gt_columns[table] = tuple(cols[j] for j in picked)
        if cfg.difficulty_spread > 0:
            difficulty = float(np.exp(cfg.difficulty_spread * rng.standard_normal()))
        else:
            difficulty = 1.0
        p_eff = min(0.45, cfg.p_err * difficulty)
        table_plan = plan_generation(
            self.table_namespace, gt_tables, p_eff, cfg.max_branches, rng
        )
        column_plans = {
            table: plan_generation(
                self._column_namespaces[table], gt_columns[table], p_eff, cfg.max_branches, rng
            )
            for table in gt_tables
        }
        distractors = [n for n in names if n not in gt_tables]
        hint = f" rather than {distractors[0]}" if distractors else ""
        question = f"Which entries relate to {' and '.join(gt_tables)}{hint}?"
        return SimInstance(
            index, question, gt_tables, gt_columns, difficulty, table_plan, column_plans
        )

    # -- factories ------------------------------------------------------------

    def table_model(self, index: int) -> SimModel:
        inst = self.instances[index]
        return SimModel(
            self.table_namespace,
            inst.gt_tables,
            inst.table_plan,
            (self.config.seed, 7, index, 0),
            self.config.deltas(),
            self.config.dim,
            self.config.layer_correlation,
        )

    def column_model(self, index: int, table: str) -> SimModel:
        inst = self.instances[index]
        table_pos = self.catalog.table_names.index(table)
        plan = inst.column_plans.get(table)
        gt_cols: Sequence[str]
        if plan is None:
            # a table outside the ground truth: fabricate a deterministic pseudo-plan
            rng = np.random.default_rng([self.config.seed, 4, index, table_pos])
            cols = self.catalog.columns_of(table)
            n_c = int(rng.integers(1, len(cols) + 1))
            picked = sorted(rng.choice(len(cols), size=n_c, replace=False).tolist())
            gt_cols = [cols[j] for j in picked]
            p_eff = min(0.45, self.config.p_err * inst.difficulty)
            plan = plan_generation(
                self._column_namespaces[table], gt_cols, p_eff, self.config.max_branches, rng
            )
            inst.column_plans[table] = plan
            gt_cols = tuple(gt_cols)
        else:
            gt_cols = inst.gt_columns.get(table, ())
            if not gt_cols:
                gt_cols = tuple()
        return SimModel(
            self._column_namespaces[table],
            gt_cols,
            plan,
            (self.config.seed, 7, index, 100 + table_pos),
            self.config.deltas(),
            self.config.dim,
            self.config.layer_correlation,
        )

    def column_factory(self, index: int) -> Callable[[str], tuple[SimModel, Namespace]]:
        def factory(table: str) -> tuple[SimModel, Namespace]:
            return self.column_model(index, table), self._column_namespaces[table]

        return factory

    def oracle_responder(self, index: int) -> OracleResponder:
        return OracleResponder(self.instances[index])

    def surrogate(self, index: int) -> SimSurrogate:
        return SimSurrogate(
            self.instances[index],
            self.config.surrogate_accuracy_tables,
            self.config.surrogate_accuracy_columns,
            np.random.default_rng([self.config.seed, 5, index]),
        )

    # -- trace production -------------------------------------------------------

    def make_trace(self, index: int) -> GenerationTrace:
        inst = self.instances[index]
        model = self.table_model(index)
        _, trace = find_branching_points(
            model,
            inst.table_plan.gt_tokens,
            trace_id=f"sim-{self.config.seed}-{index}",
            question=inst.question,
            gt_tables=inst.gt_tables,
        )
        return trace

    def make_traces(self, indices: Sequence[int] | None = None) -> list[GenerationTrace]:
        if indices is None:
            indices = range(len(self.instances))
        return [self.make_trace(i) for i in indices]


def world_with(config: SimConfig, n_instances: int, **overrides) -> SimWorld:
    """Convenience: a world from a config with field overrides applied."""
    if overrides:
        config = replace(config, **overrides)
    return SimWorld(config, n_instances)
