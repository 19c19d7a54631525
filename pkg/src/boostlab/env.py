"""Task-conditioned finite-horizon hitting-time environments.

Two symbolic stand-ins for LLM-simulated dialogue tasks:

* ``GuessGameWorld``: twenty-questions style. The agent asks yes/no questions
  about boolean item attributes and finally guesses the hidden item.
* ``NegotiationWorld``: the agent (a car salesperson) makes price offers to a
  buyer with a hidden target price who accepts, counters, or walks away.

Rewards follow the hitting-time convention: 0 on every step except success,
where the reward equals the number of turns remaining, ``h_max - (turn + 1)``.
"""

from __future__ import annotations

import itertools
import json
import math
from collections import deque
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .seeding import make_rng

GUESS = "guess"
NEGOTIATION = "negotiation"

ONGOING = "ongoing"
SUCCESS = "success"
FAILURE = "failure"
BUDGET_EXHAUSTED = "budget_exhausted"

BOS_TOKEN = 0


class EnvError(ValueError):
    pass


@dataclass(frozen=True)
class EnvConfig:
    h_max: int = 20
    gamma: float = 1.0

    def __post_init__(self):
        if int(self.h_max) < 1:
            raise EnvError(f"h_max must be >= 1, got {self.h_max}")
        if not 0.0 <= float(self.gamma) <= 1.0:
            raise EnvError(f"gamma must lie in [0, 1], got {self.gamma}")


@dataclass(frozen=True)
class TaskSpec:
    task_id: str
    category: str
    params: dict = field(default_factory=dict, compare=True, hash=False)

    def to_json(self) -> dict:
        return {"task_id": self.task_id, "category": self.category, "params": dict(self.params)}

    @classmethod
    def from_json(cls, obj: dict) -> "TaskSpec":
        return cls(str(obj["task_id"]), str(obj["category"]), dict(obj["params"]))


@dataclass(frozen=True)
class EnvState:
    task: TaskSpec
    h_max: int
    history: tuple = ()
    turn: int = 0
    done: bool = False
    terminal_kind: str = ONGOING


class _World:
    """Shared token layout: ``[BOS] + actions + observations``."""

    kind: str
    config: EnvConfig
    categories: tuple
    n_actions: int
    n_observations: int

    @property
    def vocab_size(self) -> int:
        return 1 + self.n_actions + self.n_observations

    def action_token(self, action: int) -> int:
        return 1 + int(action)

    def obs_token(self, obs: int) -> int:
        return 1 + self.n_actions + int(obs)

    def decode_token(self, token: int) -> tuple[str, int]:
        if token == BOS_TOKEN:
            return "bos", 0
        if 1 <= token <= self.n_actions:
            return "action", token - 1
        if token < self.vocab_size:
            return "obs", token - 1 - self.n_actions
        raise EnvError(f"unknown token {token}")

    def tasks(self) -> list[TaskSpec]:
        return list(self._tasks)

    def check_task(self, task: TaskSpec) -> None:
        if task.task_id not in self._task_index or self._task_index[task.task_id] != task:
            raise EnvError(f"task {task.task_id!r} does not belong to this world")


# ---------------------------------------------------------------- GuessGame

GUESS_NO, GUESS_YES, GUESS_WRONG, GUESS_CORRECT = range(4)
GUESS_OBS_NAMES = ("No", "Yes", "Wrong", "Correct")


class GuessGameWorld(_World):
    """Items with boolean attributes; ask(j) for j < n_attr, guess(i) after."""

    kind = GUESS
    n_observations = 4

    def __init__(
        self,
        attributes,
        item_categories: Sequence[str],
        item_names: Sequence[str] | None = None,
        attribute_names: Sequence[str] | None = None,
        categories: Sequence[str] | None = None,
        config: EnvConfig = EnvConfig(h_max=20),
    ):
        attrs = np.array(attributes, dtype=bool)
        if attrs.ndim != 2 or attrs.shape[0] < 1 or attrs.shape[1] < 1:
            raise EnvError("attributes must be a non-empty (items x attributes) matrix")
        attrs.flags.writeable = False
        self.attributes = attrs
        self.n_items, self.n_attr = attrs.shape
        if len(item_categories) != self.n_items:
            raise EnvError("one category per item required")
        self.item_categories = tuple(str(c) for c in item_categories)
        self.item_names = tuple(item_names) if item_names is not None else tuple(
            f"item{i}" for i in range(self.n_items))
        self.attribute_names = tuple(attribute_names) if attribute_names is not None else tuple(
            f"attr{j}" for j in range(self.n_attr))
        if categories is None:
            categories = list(dict.fromkeys(self.item_categories))
        self.categories = tuple(categories)
        self.config = config
        self.n_actions = self.n_attr + self.n_items

        if len({row.tobytes() for row in attrs}) != self.n_items:
            raise EnvError("items must be distinct as attribute vectors")
        unknown = set(self.item_categories) - set(self.categories)
        if unknown:
            raise EnvError(f"item categories {sorted(unknown)} missing from category list")
        if self.n_items > 1:
            counts = {c: self.item_categories.count(c) for c in set(self.item_categories)}
            small = sorted(c for c, n in counts.items() if n < 2)
            if small:
                raise EnvError(f"categories with fewer than 2 items: {small}")

        self._tasks = tuple(
            TaskSpec(f"item-{i}", self.item_categories[i], {"item": i}) for i in range(self.n_items))
        self._task_index = {t.task_id: t for t in self._tasks}

    def is_ask(self, action: int) -> bool:
        return 0 <= action < self.n_attr

    def guess_action(self, item: int) -> int:
        return self.n_attr + int(item)

    def action_name(self, action: int) -> str:
        if self.is_ask(action):
            return f"ask[{self.attribute_names[action]}]"
        return f"guess[{self.item_names[action - self.n_attr]}]"

    def obs_name(self, obs: int) -> str:
        return GUESS_OBS_NAMES[obs]

    def answer(self, item: int, attr: int) -> int:
        return GUESS_YES if self.attributes[item, attr] else GUESS_NO

    def consistent_items(self, history: Iterable, candidates: Iterable[int] | None = None) -> list[int]:
        """Items whose attributes agree with every yes/no answer in ``history``."""
        items = range(self.n_items) if candidates is None else candidates
        asks = [(a, o) for a, o in history if self.is_ask(a) and o in (GUESS_YES, GUESS_NO)]
        out = []
        for i in items:
            if all(self.attributes[i, a] == (o == GUESS_YES) for a, o in asks):
                out.append(i)
        return out

    def _transition(self, state: EnvState, action: int):
        item = state.task.params["item"]
        if self.is_ask(action):
            return self.answer(item, action), 0.0, False, ONGOING
        if action - self.n_attr == item:
            return GUESS_CORRECT, float(state.h_max - (state.turn + 1)), True, SUCCESS
        return GUESS_WRONG, 0.0, True, FAILURE

    def to_json(self) -> dict:
        return {
            "env_kind": GUESS,
            "h_max": self.config.h_max,
            "gamma": self.config.gamma,
            "categories": list(self.categories),
            "attribute_names": list(self.attribute_names),
            "items": [
                {"name": self.item_names[i], "category": self.item_categories[i],
                 "attributes": [int(v) for v in self.attributes[i]]}
                for i in range(self.n_items)
            ],
        }


# ---------------------------------------------------------------- Negotiation

NEG_ACCEPT, NEG_WALKAWAY = 0, 1  # counter(k) observation is 2 + k


class NegotiationWorld(_World):
    """Seller offers grid prices; a buyer with hidden target accepts iff offer <= target."""

    kind = NEGOTIATION

    def __init__(
        self,
        brands: Sequence[tuple[str, tuple[int, int]]],
        price_grid: Sequence[int],
        walk_away_rounds: int = 3,
        categories: Sequence[str] | None = None,
        config: EnvConfig = EnvConfig(h_max=10),
    ):
        grid = tuple(int(p) for p in price_grid)
        if not grid or list(grid) != sorted(set(grid)):
            raise EnvError("price grid must be non-empty, strictly ascending")
        if int(walk_away_rounds) < 1:
            raise EnvError("walk_away_rounds must be >= 1")
        self.price_grid = grid
        self.walk_away_rounds = int(walk_away_rounds)
        self.brands = tuple((str(name), (int(lo), int(hi))) for name, (lo, hi) in brands)
        if not self.brands:
            raise EnvError("at least one brand required")
        for name, (lo, hi) in self.brands:
            if not grid[0] <= lo <= hi <= grid[-1]:
                raise EnvError(f"brand {name!r} interval [{lo}, {hi}] outside the offer grid span")
            if not any(lo <= p <= hi for p in grid):
                raise EnvError(f"brand {name!r} interval holds no grid price")
        self.categories = tuple(categories) if categories is not None else tuple(b for b, _ in self.brands)
        self.config = config
        self.n_actions = len(grid)
        self.n_observations = 2 + len(grid)
        tasks = []
        for name, (lo, hi) in self.brands:
            for p in grid:
                if lo <= p <= hi:
                    tasks.append(TaskSpec(f"{name}-{p}", name, {"target": p, "brand": name}))
        self._tasks = tuple(tasks)
        self._task_index = {t.task_id: t for t in self._tasks}

    def brand_interval(self, brand: str) -> tuple[int, int]:
        return dict(self.brands)[brand]

    def action_name(self, action: int) -> str:
        return f"offer[{self.price_grid[action]}]"

    def obs_name(self, obs: int) -> str:
        if obs == NEG_ACCEPT:
            return "Accept"
        if obs == NEG_WALKAWAY:
            return "WalkAway"
        return f"Counter[{self.price_grid[obs - 2]}]"

    def snap(self, price: float) -> int:
        """Index of the grid price nearest to ``price`` (lower index on ties)."""
        dists = [abs(p - price) for p in self.price_grid]
        return int(np.argmin(dists))

    def counter_index(self, offer: int, target: int) -> int:
        mid = math.floor((offer + target) / 2 + 0.5)
        return self.snap(mid)

    def rejections(self, history) -> int:
        return sum(1 for _, o in history if o >= 2 or o == NEG_WALKAWAY)

    def buyer_response(self, target: int, offer_index: int, prior_rejections: int) -> int:
        offer = self.price_grid[offer_index]
        if offer <= target:
            return NEG_ACCEPT
        if prior_rejections + 1 >= self.walk_away_rounds:
            return NEG_WALKAWAY
        return 2 + self.counter_index(offer, target)

    def _transition(self, state: EnvState, action: int):
        obs = self.buyer_response(state.task.params["target"], action, self.rejections(state.history))
        if obs == NEG_ACCEPT:
            return obs, float(state.h_max - (state.turn + 1)), True, SUCCESS
        if obs == NEG_WALKAWAY:
            return obs, 0.0, True, FAILURE
        return obs, 0.0, False, ONGOING

    def to_json(self) -> dict:
        return {
            "env_kind": NEGOTIATION,
            "h_max": self.config.h_max,
            "gamma": self.config.gamma,
            "categories": list(self.categories),
            "brands": [{"name": n, "lo": lo, "hi": hi} for n, (lo, hi) in self.brands],
            "price_grid": list(self.price_grid),
            "walk_away_rounds": self.walk_away_rounds,
        }


World = GuessGameWorld | NegotiationWorld


# ---------------------------------------------------------------- operations

def sample_task(world: World, category_filter: Iterable[str] | None = None, rng_seed: int = 0) -> TaskSpec:
    """Uniform draw over the world's tasks, optionally restricted to categories.

    Category matching is case-insensitive.
    """
    tasks = world.tasks()
    if not tasks:
        raise EnvError("world has no tasks")
    if category_filter is not None:
        wanted = {c.lower() for c in category_filter}
        tasks = [t for t in tasks if t.category.lower() in wanted]
        if not tasks:
            raise EnvError("empty-filter-intersection: no task matches the category filter")
    rng = make_rng(rng_seed, "sample_task")
    return tasks[int(rng.integers(len(tasks)))]


def reset(world: World, task: TaskSpec, config: EnvConfig | None = None) -> EnvState:
    world.check_task(task)
    config = config or world.config
    return EnvState(task=task, h_max=int(config.h_max))


def step(world: World, state: EnvState, action: int) -> tuple[EnvState, float, bool]:
    if state.done:
        raise EnvError("step-after-done: episode already finished")
    action = int(action)
    if not 0 <= action < world.n_actions:
        raise EnvError(f"unknown action {action}")
    obs, reward, done, kind = world._transition(state, action)
    turn = state.turn + 1
    if not done and turn >= state.h_max:
        done, kind = True, BUDGET_EXHAUSTED
    new = replace(state, history=state.history + ((action, obs),), turn=turn, done=done,
                  terminal_kind=kind)
    return new, reward, done


def hitting_time(trajectory, h_max: int) -> int:
    """Steps to success; ``h_max`` for failed or exhausted episodes.

    Success is read off the terminal reward: ``reward = h_max - T``.
    """
    steps = trajectory.steps
    if not steps or not steps[-1].done:
        raise EnvError("incomplete trajectory")
    r = steps[-1].reward
    if r > 0:
        t = h_max - r
        if t != len(steps):
            raise EnvError(f"terminal reward {r} inconsistent with {len(steps)} steps at h_max={h_max}")
        return int(t)
    return int(h_max)


def optimal_hitting_oracle(world: World, task: TaskSpec, config: EnvConfig | None = None) -> int:
    """Minimum hitting time by breadth-first search over belief states.

    GuessGame beliefs are candidate-item sets and a guess is only admissible
    once the candidate set is the single hidden item. Negotiation beliefs are
    the sets of target prices consistent with the buyer's replies so far.
    """
    config = config or world.config
    world.check_task(task)
    if isinstance(world, GuessGameWorld):
        return _guess_bfs(world, task.params["item"], config.h_max)
    return _negotiation_bfs(world, task.params["target"], config.h_max)


def _guess_bfs(world: GuessGameWorld, item: int, h_max: int) -> int:
    if world.n_items > 16:
        raise EnvError("world too large for exhaustive search (more than 16 items)")
    same = []
    for j in range(world.n_attr):
        mask = 0
        for i in range(world.n_items):
            if world.attributes[i, j] == world.attributes[item, j]:
                mask |= 1 << i
        same.append(mask)
    goal = 1 << item
    start = (1 << world.n_items) - 1
    frontier = deque([(start, 0)])
    seen = {start}
    while frontier:
        belief, asks = frontier.popleft()
        if belief == goal:
            return min(asks + 1, h_max)
        if asks + 1 >= h_max:
            continue
        for m in same:
            nxt = belief & m
            if nxt not in seen:
                seen.add(nxt)
                frontier.append((nxt, asks + 1))
    return h_max


def _negotiation_bfs(world: NegotiationWorld, target: int, h_max: int) -> int:
    if len(world.price_grid) > 12:
        raise EnvError("world too large for exhaustive search (more than 12 grid prices)")
    grid = world.price_grid
    start = (frozenset(p for p in grid if any(lo <= p <= hi for _, (lo, hi) in world.brands)), 0)
    frontier = deque([(start, 0)])
    seen = {start}
    while frontier:
        (belief, rej), depth = frontier.popleft()
        if depth >= h_max:
            continue
        for k, offer in enumerate(grid):
            obs = world.buyer_response(target, k, rej)
            if obs == NEG_ACCEPT:
                return depth + 1
            if obs == NEG_WALKAWAY:
                continue
            nxt_belief = frozenset(
                t for t in belief if t < offer and world.buyer_response(t, k, rej) == obs)
            node = (nxt_belief, rej + 1)
            if node not in seen:
                seen.add(node)
                frontier.append((node, depth + 1))
    return h_max


def run_episode(world: World, task: TaskSpec, actor, rng: np.random.Generator,
                config: EnvConfig | None = None):
    """Roll ``actor`` out to termination; returns (final state, per-step rewards)."""
    state = reset(world, task, config)
    rewards = []
    while not state.done:
        state, r, _ = step(world, state, actor.act(state, rng))
        rewards.append(r)
    return state, rewards


# ---------------------------------------------------------------- serialization

def world_from_json(obj: dict) -> World:
    kind = obj.get("env_kind")
    config = EnvConfig(h_max=int(obj["h_max"]), gamma=float(obj.get("gamma", 1.0)))
    if kind == GUESS:
        items = obj["items"]
        return GuessGameWorld(
            attributes=[it["attributes"] for it in items],
            item_categories=[it["category"] for it in items],
            item_names=[it["name"] for it in items],
            attribute_names=obj.get("attribute_names"),
            categories=obj.get("categories"),
            config=config,
        )
    if kind == NEGOTIATION:
        return NegotiationWorld(
            brands=[(b["name"], (b["lo"], b["hi"])) for b in obj["brands"]],
            price_grid=obj["price_grid"],
            walk_away_rounds=obj.get("walk_away_rounds", 3),
            categories=obj.get("categories"),
            config=config,
        )
    raise EnvError(f"unknown env_kind {kind!r}")


def save_world(world: World, path) -> None:
    Path(path).write_text(json.dumps(world.to_json(), indent=1, sort_keys=True) + "\n", encoding="utf-8")


def load_world(path) -> World:
    return world_from_json(json.loads(Path(path).read_text(encoding="utf-8")))


# ---------------------------------------------------------------- default worlds

TQ_TAXONOMY = {
    "Sports": ["Basketball", "Football", "Baseball", "Tennis racket", "Helmet"],
    "Animals": ["Cat", "Dog", "Horse", "Lion", "Elephant"],
    "Fruits": ["Apple", "Banana", "Strawberry", "Watermelon", "Mango"],
    "Vehicles": ["Car", "Motorcycle", "Airplane", "Helicopter", "Ship"],
    "Clothes": ["Shirt", "Jacket", "Dress", "Boots", "Scarf"],
    "Electronics": ["Smartphone", "Television", "Camera", "Refrigerator", "Blender"],
    "Musical Instruments": ["Piano", "Guitar", "Violin", "Trumpet", "Harp"],
    "Furniture": ["Chair", "Bed", "Couch", "Bookcase", "Nightstand"],
    "Office Supplies": ["Pen", "Stapler", "Calculator", "Scissors", "Diary"],
    "Vegetables": ["Carrot", "Broccoli", "Tomato", "Spinach", "Cucumber"],
    "Art": ["Painting", "Paintbrush", "Canvas", "Sculpture", "Marker"],
    "Kitchen Tools": ["Knife", "Fork", "Bowl", "Frying pan", "Whisk"],
    "Nature": ["Rock", "Tree", "Mountain", "Ocean", "Cactus"],
    "Toys": ["Lego", "Doll", "Kite", "Puzzle", "Stuffed animal"],
    "Jewelry": ["Earrings", "Necklace", "Ring", "Watch", "Pendant"],
    "Garden Supplies": ["Shovel", "Rake", "Watering can", "Lawn mower", "Gloves"],
    "Tools": ["Hammer", "Screwdriver", "Wrench", "Saw", "Drill"],
}

# extra members so the first categories can hold 8 items each
_TQ_EXTRA = {
    "Sports": ["Skateboard", "Golf club", "Hockey stick"],
    "Animals": ["Rabbit", "Eagle", "Shark"],
    "Fruits": ["Grape", "Pineapple", "Cherry"],
    "Vehicles": ["Bicycle", "Train", "Bus"],
    "Clothes": ["Hat", "Socks", "Sweater"],
    "Electronics": ["Laptop", "Headphones", "Microwave"],
    "Musical Instruments": ["Drum", "Flute", "Saxophone"],
    "Furniture": ["Table", "Desk", "Wardrobe"],
}

ATTRIBUTE_NAMES = (
    "is alive", "is edible", "is man-made", "bigger than a breadbox",
    "uses electricity", "found outdoors", "is soft", "makes sound",
)

CAR_BRANDS = (
    "Volkswagen", "Lexus", "Ford", "Mazda", "Hyundai", "Toyota",
    "Mercedes-Benz", "BMW", "Audi", "Subaru", "Honda", "Porsche", "Tesla",
)

# (lo, hi) target-price intervals in dollars, on a 16-point 4k grid from 18k to 78k
_BRAND_INTERVALS = {
    "Volkswagen": (22000, 38000), "Lexus": (42000, 62000), "Ford": (22000, 38000),
    "Mazda": (22000, 34000), "Hyundai": (18000, 30000), "Toyota": (26000, 42000),
    "Mercedes-Benz": (50000, 70000), "BMW": (46000, 66000), "Audi": (42000, 62000),
    "Subaru": (26000, 42000), "Honda": (26000, 42000), "Porsche": (62000, 78000),
    "Tesla": (38000, 58000),
}


def _structured_attributes(rng, n_categories: int, per_category: int, n_attr: int, flip: float):
    """Category prototypes with per-item bit flips; items are forced distinct."""
    if n_categories * per_category > 2 ** n_attr:
        raise EnvError("not enough attribute patterns for the requested item count")
    prototypes = []
    while len(prototypes) < n_categories:
        p = rng.integers(0, 2, n_attr).astype(bool)
        if not any((p == q).all() for q in prototypes):
            prototypes.append(p)
    seen = set()
    rows = []
    for proto in prototypes:
        members = 0
        while members < per_category:
            row = proto ^ (rng.random(n_attr) < flip)
            key = row.tobytes()
            if key in seen:
                continue
            seen.add(key)
            rows.append(row)
            members += 1
    return np.array(rows)


def default_guess_world(seed: int = 0, n_items: int = 64, n_attr: int = 8, n_categories: int = 8,
                        h_max: int = 20, flip: float = 0.2) -> GuessGameWorld:
    """64 items x 8 attributes x 8 categories by default; deterministic in ``seed``."""
    if n_items % n_categories:
        raise EnvError("n_items must be a multiple of n_categories")
    per = n_items // n_categories
    names_by_cat = {c: TQ_TAXONOMY[c] + _TQ_EXTRA.get(c, []) for c in TQ_TAXONOMY}
    cats = list(TQ_TAXONOMY)[:n_categories]
    if len(cats) < n_categories:
        raise EnvError(f"at most {len(TQ_TAXONOMY)} categories available")
    rng = make_rng(seed, "guess_world")
    attrs = _structured_attributes(rng, n_categories, per, n_attr, flip)
    item_cats, names = [], []
    for c in cats:
        pool = names_by_cat[c]
        for k in range(per):
            item_cats.append(c)
            names.append(pool[k] if k < len(pool) else f"{c} #{k + 1}")
    attr_names = ATTRIBUTE_NAMES[:n_attr] if n_attr <= len(ATTRIBUTE_NAMES) else None
    return GuessGameWorld(attrs, item_cats, names, attr_names, cats, EnvConfig(h_max=h_max))


def taxonomy_guess_world(seed: int = 0, n_attr: int = 8, h_max: int = 20) -> GuessGameWorld:
    """All 17 word categories with their five sample objects each."""
    rng = make_rng(seed, "taxonomy_world")
    cats = list(TQ_TAXONOMY)
    attrs = _structured_attributes(rng, len(cats), 5, n_attr, 0.2)
    item_cats = [c for c in cats for _ in range(5)]
    names = [n for c in cats for n in TQ_TAXONOMY[c]]
    attr_names = ATTRIBUTE_NAMES[:n_attr] if n_attr <= len(ATTRIBUTE_NAMES) else None
    return GuessGameWorld(attrs, item_cats, names, attr_names, cats, EnvConfig(h_max=h_max))


def default_negotiation_world(h_max: int = 10, walk_away_rounds: int = 3) -> NegotiationWorld:
    """13 brands over a 16-price grid with walk-away after 3 rejected offers."""
    grid = list(range(18000, 78001, 4000))
    brands = [(b, _BRAND_INTERVALS[b]) for b in CAR_BRANDS]
    return NegotiationWorld(brands, grid, walk_away_rounds, config=EnvConfig(h_max=h_max))


def bisecting_guess_world(n_bits: int = 3, h_max: int = 20, items_per_category: int = 2) -> GuessGameWorld:
    """2**n_bits items whose attributes are the binary digits of the item index."""
    n = 2 ** n_bits
    attrs = [[(i >> (n_bits - 1 - j)) & 1 for j in range(n_bits)] for i in range(n)]
    cats = [f"cat{i // items_per_category}" for i in range(n)]
    return GuessGameWorld(attrs, cats, config=EnvConfig(h_max=h_max))


def random_small_guess_world(rng: np.random.Generator, max_items: int = 16, h_max: int = 20) -> GuessGameWorld:
    """Random world with at most ``max_items`` items (for exhaustive checks)."""
    n_attr = int(rng.integers(2, 7))
    n_items = int(rng.integers(1, min(max_items, 2 ** n_attr) + 1))
    picks = rng.choice(2 ** n_attr, size=n_items, replace=False)
    attrs = [[(int(p) >> j) & 1 for j in range(n_attr)] for p in picks]
    if n_items == 1:
        cats = ["c0"]
    else:
        n_cat = int(rng.integers(1, n_items // 2 + 1))
        cats = [f"c{min(i // 2, n_cat - 1)}" for i in range(n_items)]
    return GuessGameWorld(attrs, cats, config=EnvConfig(h_max=h_max))


def random_small_negotiation_world(rng: np.random.Generator, max_prices: int = 12,
                                   h_max: int = 10) -> NegotiationWorld:
    n = int(rng.integers(1, max_prices + 1))
    grid = sorted(rng.choice(np.arange(10, 200), size=n, replace=False).tolist())
    brands = []
    for b in range(int(rng.integers(1, 5))):
        i, j = sorted(rng.integers(0, n, size=2).tolist())
        brands.append((f"brand{b}", (grid[i], grid[j])))
    return NegotiationWorld(brands, grid, int(rng.integers(1, 4)), config=EnvConfig(h_max=h_max))


def minimal_separating_asks(world: GuessGameWorld, item: int) -> tuple[int, ...]:
    """Smallest attribute subset telling ``item`` apart from all others.

    Brute force over subsets in increasing size; independent of the BFS oracle.
    """
    others = [i for i in range(world.n_items) if i != item]
    for size in range(world.n_attr + 1):
        for subset in itertools.combinations(range(world.n_attr), size):
            if all(any(world.attributes[o, j] != world.attributes[item, j] for j in subset) for o in others):
                return subset
    raise EnvError("item is not separable")
