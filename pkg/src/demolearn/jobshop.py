"""Deterministic synthetic scheduling world.

Two agents serve twenty tasks placed in the unit square. Space is discretized
into a 10x10 cell grid for the occupancy constraint (no two agents in the
same cell); travel time is Euclidean distance at speed 0.1 per tick, rounded
up. Three hidden dispatch heuristics (earliest deadline, nearest task,
shortest duration) generate heterogeneous demonstrations over identical
scheduling constraints.

Feature vectors deliberately describe only tasks, agents and the clock; no
feature reveals which heuristic produced a decision.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from . import serialize
from .errors import DataError, UsageError

GRID_CELLS = 10
SPEED = 0.1  # distance per tick
EPISODE_CAP = 400  # ticks
HORIZON = float(EPISODE_CAP)  # clock/deadline normalizer
DIST_NORM = 1.5
DUR_NORM = 10.0

STATE_FEATURE_DIM = 6
ACTION_FEATURE_DIM = 5

PENDING, IN_PROGRESS, DONE = "pending", "in_progress", "done"
POLICIES = ("EDF", "NEAREST", "SPT")

DATASET_FORMAT_VERSION = 1


@dataclass(frozen=True)
class Task:
    id: int
    location: tuple[float, float]
    duration: int
    deadline: int

    def __post_init__(self):
        if self.duration <= 0:
            raise UsageError("task duration must be positive")
        if self.deadline < self.duration:
            raise UsageError("deadline cannot precede the task's own duration")


@dataclass(frozen=True)
class AgentState:
    id: int
    position: tuple[float, float]
    busy_until: int = 0
    task_id: int | None = None


@dataclass(frozen=True)
class SchedulingAction:
    """Assign agent_id to task_id, or WAIT (both ids None)."""

    agent_id: int | None
    task_id: int | None

    @property
    def is_wait(self) -> bool:
        return self.agent_id is None


WAIT = SchedulingAction(None, None)


@dataclass(frozen=True)
class SchedulingState:
    clock: int
    tasks: tuple[Task, ...]
    status: tuple[str, ...]
    agents: tuple[AgentState, ...]

    @property
    def num_tasks(self) -> int:
        return len(self.tasks)

    @property
    def num_agents(self) -> int:
        return len(self.agents)

    def is_busy(self, agent: AgentState) -> bool:
        return agent.busy_until > self.clock

    def occupied_cells(self, exclude_agent: int | None = None) -> set[tuple[int, int]]:
        return {
            cell_of(a.position) for a in self.agents if a.id != exclude_agent
        }

    def pending_ids(self) -> list[int]:
        return [t.id for t in self.tasks if self.status[t.id] == PENDING]

    def all_done(self) -> bool:
        return all(s == DONE for s in self.status)


def cell_of(point: tuple[float, float]) -> tuple[int, int]:
    x, y = point
    return (min(int(x * GRID_CELLS), GRID_CELLS - 1), min(int(y * GRID_CELLS), GRID_CELLS - 1))


def travel_ticks(src: tuple[float, float], dst: tuple[float, float]) -> int:
    return math.ceil(math.hypot(dst[0] - src[0], dst[1] - src[1]) / SPEED)


def agent_start_positions(num_agents: int) -> list[tuple[float, float]]:
    # spread along the bottom edge so starting cells never collide
    return [((i + 0.5) / num_agents, 0.05) for i in range(num_agents)]


def generate_instance(seed: int, num_tasks: int = 20, num_agents: int = 2) -> SchedulingState:
    """Fresh instance, reproducible from the seed.

    Deadlines are drawn so every task is feasible in isolation: at least the
    duration plus the worst-case travel from any agent's start position.
    """
    if num_tasks < 1 or num_agents < 1:
        raise UsageError("need at least one task and one agent")
    rng = np.random.default_rng(seed)
    starts = agent_start_positions(num_agents)
    tasks = []
    for tid in range(num_tasks):
        loc = (float(rng.uniform(0.0, 1.0)), float(rng.uniform(0.0, 1.0)))
        duration = int(rng.integers(2, 9))
        worst_travel = max(travel_ticks(s, loc) for s in starts)
        deadline = duration + worst_travel + int(rng.integers(10, 241))
        tasks.append(Task(tid, loc, duration, deadline))
    agents = tuple(AgentState(i, starts[i]) for i in range(num_agents))
    return SchedulingState(0, tuple(tasks), tuple([PENDING] * num_tasks), agents)


def assign_is_legal(state: SchedulingState, agent: AgentState, task: Task) -> bool:
    if state.is_busy(agent) or state.status[task.id] != PENDING:
        return False
    dest = cell_of(task.location)
    if dest in state.occupied_cells(exclude_agent=agent.id):
        return False
    finish = state.clock + travel_ticks(agent.position, task.location) + task.duration
    return finish <= task.deadline


def legal_actions(state: SchedulingState) -> list[SchedulingAction]:
    """All currently legal actions, in (task, agent) order, WAIT last.

    WAIT is legal iff some agent is busy, or no assign is legal while pending
    tasks remain (that second case is the deadlock situation the episode
    driver detects and terminates on).
    """
    actions = []
    for task in state.tasks:
        if state.status[task.id] != PENDING:
            continue
        for agent in state.agents:
            if assign_is_legal(state, agent, task):
                actions.append(SchedulingAction(agent.id, task.id))
    any_busy = any(state.is_busy(a) for a in state.agents)
    if any_busy or (not actions and state.pending_ids()):
        actions.append(WAIT)
    return actions


def is_terminal(state: SchedulingState) -> bool:
    if state.all_done() or state.clock >= EPISODE_CAP:
        return True
    # deadlock: pending work, everyone idle, nothing assignable
    any_busy = any(state.is_busy(a) for a in state.agents)
    assigns = [a for a in legal_actions(state) if not a.is_wait]
    return not any_busy and not assigns and bool(state.pending_ids())


def step(state: SchedulingState, action: SchedulingAction) -> SchedulingState:
    """Deterministic transition. Illegal actions raise, never auto-correct."""
    if action.is_wait:
        busy = [a for a in state.agents if state.is_busy(a)]
        if not busy:
            if not legal_actions(state):
                raise UsageError("WAIT is not legal: nothing is in progress")
            raise UsageError("cannot WAIT a deadlocked state forward")
        next_tick = min(a.busy_until for a in busy)
        agents = []
        status = list(state.status)
        for a in state.agents:
            if a.task_id is not None and a.busy_until <= next_tick:
                status[a.task_id] = DONE
                agents.append(replace(a, busy_until=next_tick, task_id=None))
            else:
                agents.append(a)
        return SchedulingState(next_tick, state.tasks, tuple(status), tuple(agents))

    agent = state.agents[action.agent_id]
    task = state.tasks[action.task_id]
    if not assign_is_legal(state, agent, task):
        raise UsageError(
            f"illegal assignment of agent {action.agent_id} to task {action.task_id}"
        )
    finish = state.clock + travel_ticks(agent.position, task.location) + task.duration
    status = list(state.status)
    status[task.id] = IN_PROGRESS
    agents = list(state.agents)
    # the destination cell is reserved immediately: the agent's position
    # becomes the task location for all subsequent occupancy checks
    agents[agent.id] = AgentState(agent.id, task.location, finish, task.id)
    return SchedulingState(state.clock, state.tasks, tuple(status), tuple(agents))


def heuristic_action(policy: str, state: SchedulingState) -> SchedulingAction:
    """Dispatch by one of the three hidden expert rules.

    EDF minimizes task deadline, NEAREST minimizes agent-to-task distance,
    SPT minimizes duration; ties break on (task id, agent id). WAIT when no
    assignment is legal.
    """
    if policy not in POLICIES:
        raise UsageError(f"unknown policy {policy!r}")
    assigns = [a for a in legal_actions(state) if not a.is_wait]
    if not assigns:
        return WAIT

    def key(a: SchedulingAction):
        task = state.tasks[a.task_id]
        if policy == "EDF":
            primary = task.deadline
        elif policy == "SPT":
            primary = task.duration
        else:
            agent = state.agents[a.agent_id]
            primary = math.hypot(
                task.location[0] - agent.position[0], task.location[1] - agent.position[1]
            )
        return (primary, a.task_id, a.agent_id)

    return min(assigns, key=key)


def action_to_id(action: SchedulingAction, num_tasks: int, num_agents: int) -> int:
    """Task-major slot id; WAIT takes the last slot."""
    if action.is_wait:
        return num_tasks * num_agents
    return action.task_id * num_agents + action.agent_id


def id_to_action(action_id: int, num_tasks: int, num_agents: int) -> SchedulingAction:
    if action_id == num_tasks * num_agents:
        return WAIT
    if not (0 <= action_id < num_tasks * num_agents):
        raise UsageError(f"action id {action_id} out of range")
    return SchedulingAction(action_id % num_agents, action_id // num_agents)


def num_action_slots(num_tasks: int, num_agents: int) -> int:
    return num_tasks * num_agents + 1


def featurize(
    state: SchedulingState,
) -> tuple[np.ndarray, dict[SchedulingAction, np.ndarray]]:
    """State features and per-legal-action features, scaled to about [-1, 1].

    State: fraction done, normalized clock, min/mean/max pending deadline
    slack, idle-agent fraction. Per action: completion slack, duration,
    agent-task distance, deadline, destination congestion flag. WAIT gets an
    all-zero action vector.
    """
    pending = state.pending_ids()
    done = sum(1 for s in state.status if s == DONE)
    if pending:
        slacks = [(state.tasks[t].deadline - state.clock) / HORIZON for t in pending]
        s_min, s_mean, s_max = min(slacks), sum(slacks) / len(slacks), max(slacks)
    else:
        s_min = s_mean = s_max = 0.0
    idle = sum(1 for a in state.agents if not state.is_busy(a))
    state_features = np.array(
        [
            done / state.num_tasks,
            state.clock / HORIZON,
            s_min,
            s_mean,
            s_max,
            idle / state.num_agents,
        ],
        dtype=np.float64,
    )

    per_action: dict[SchedulingAction, np.ndarray] = {}
    for action in legal_actions(state):
        per_action[action] = _action_features(state, action)
    return state_features, per_action


# WAIT's feature vector sits beyond every real action's range on the slack,
# duration, distance and deadline axes, so it is identifiable from feature
# differences and ranks last under each dispatch ordering.
WAIT_FEATURES = (1.2, 1.2, 1.2, 1.2, 0.0)


def _action_features(state: SchedulingState, action: SchedulingAction) -> np.ndarray:
    if action.is_wait:
        return np.array(WAIT_FEATURES, dtype=np.float64)
    agent = state.agents[action.agent_id]
    task = state.tasks[action.task_id]
    dist = math.hypot(
        task.location[0] - agent.position[0], task.location[1] - agent.position[1]
    )
    travel = travel_ticks(agent.position, task.location)
    slack = (task.deadline - state.clock - travel - task.duration) / HORIZON
    dest = cell_of(task.location)
    congested = 0.0
    for other in state.agents:
        if other.id == action.agent_id:
            continue
        ocell = cell_of(other.position)
        if abs(ocell[0] - dest[0]) <= 1 and abs(ocell[1] - dest[1]) <= 1:
            congested = 1.0
            break
    return np.array(
        [slack, task.duration / DUR_NORM, dist / DIST_NORM, task.deadline / HORIZON, congested],
        dtype=np.float64,
    )


@dataclass
class DemoStep:
    state_features: np.ndarray
    action_ids: list[int]
    action_features: list[np.ndarray]
    chosen_action_id: int

    @property
    def num_candidates(self) -> int:
        return len(self.action_ids)

    def features_of(self, action_id: int) -> np.ndarray:
        return self.action_features[self.action_ids.index(action_id)]


@dataclass
class Demonstration:
    demonstrator_id: str
    steps: list[DemoStep]
    num_tasks: int
    num_agents: int
    hidden_policy: str | None = None  # evaluation-only; training code must not read it

    @property
    def num_slots(self) -> int:
        return num_action_slots(self.num_tasks, self.num_agents)


def run_episode(
    state: SchedulingState,
    policy: str | Sequence[str],
    demonstrator_id: str,
    hidden_policy: str | None = None,
) -> Demonstration:
    """Drive an instance to completion under a heuristic, recording every
    decision step. policy may be a per-step sequence for mixture demos."""
    num_tasks, num_agents = state.num_tasks, state.num_agents
    steps: list[DemoStep] = []
    t = 0
    while not is_terminal(state) and state.clock < EPISODE_CAP:
        actions = legal_actions(state)
        if not actions:
            break
        step_policy = policy if isinstance(policy, str) else policy[min(t, len(policy) - 1)]
        chosen = heuristic_action(step_policy, state)
        if chosen.is_wait and not any(state.is_busy(a) for a in state.agents):
            break  # deadlock: WAIT cannot advance the clock
        state_features, per_action = featurize(state)
        ordered = sorted(per_action, key=lambda a: action_to_id(a, num_tasks, num_agents))
        steps.append(
            DemoStep(
                state_features=state_features,
                action_ids=[action_to_id(a, num_tasks, num_agents) for a in ordered],
                action_features=[per_action[a] for a in ordered],
                chosen_action_id=action_to_id(chosen, num_tasks, num_agents),
            )
        )
        state = step(state, chosen)
        t += 1
    label = hidden_policy if hidden_policy is not None else (
        policy if isinstance(policy, str) else None
    )
    return Demonstration(demonstrator_id, steps, num_tasks, num_agents, hidden_policy=label)


def generate_demonstrations(
    n_schedules: int,
    policy_mix: Sequence[float],
    seed: int,
    num_tasks: int = 20,
    num_agents: int = 2,
    id_prefix: str = "demo",
) -> list[Demonstration]:
    """One demonstration per schedule: fresh instance, one hidden heuristic
    drawn from policy_mix. Fully reproducible from the seed."""
    mix = np.asarray(policy_mix, dtype=np.float64)
    if mix.shape != (len(POLICIES),) or np.any(mix < 0) or mix.sum() <= 0:
        raise UsageError("policy_mix must be 3 nonnegative weights with positive sum")
    mix = mix / mix.sum()
    rng = np.random.default_rng(seed)
    demos = []
    for i in range(n_schedules):
        instance_seed = int(rng.integers(0, 2**63 - 1))
        policy = POLICIES[int(rng.choice(len(POLICIES), p=mix))]
        state = generate_instance(instance_seed, num_tasks, num_agents)
        demos.append(run_episode(state, policy, f"{id_prefix}{i:05d}"))
    return demos


def generate_mixture_demonstrations(
    n_schedules: int,
    policy_mix: Sequence[float],
    seed: int,
    num_tasks: int = 20,
    num_agents: int = 2,
    id_prefix: str = "mix",
) -> list[Demonstration]:
    """Mixture demonstrators: each schedule gets a fixed per-demonstrator
    distribution over the heuristics and samples a policy per step."""
    mix = np.asarray(policy_mix, dtype=np.float64)
    mix = mix / mix.sum()
    rng = np.random.default_rng(seed)
    demos = []
    for i in range(n_schedules):
        instance_seed = int(rng.integers(0, 2**63 - 1))
        weights = rng.dirichlet(1.0 + 4.0 * mix)
        per_step = [
            POLICIES[int(rng.choice(len(POLICIES), p=weights))] for _ in range(EPISODE_CAP)
        ]
        state = generate_instance(instance_seed, num_tasks, num_agents)
        demos.append(
            run_episode(state, per_step, f"{id_prefix}{i:05d}", hidden_policy="MIXTURE")
        )
    return demos


def demonstration_to_record(demo: Demonstration) -> dict:
    return {
        "format_version": DATASET_FORMAT_VERSION,
        "demonstrator_id": demo.demonstrator_id,
        "num_tasks": demo.num_tasks,
        "num_agents": demo.num_agents,
        "eval_only": {"hidden_policy": demo.hidden_policy},
        "steps": [
            {
                "state_features": s.state_features,
                "actions": [
                    {"action_id": aid, "features": feats}
                    for aid, feats in zip(s.action_ids, s.action_features)
                ],
                "chosen_action_id": s.chosen_action_id,
            }
            for s in demo.steps
        ],
    }


def demonstration_from_record(record: dict, strip_eval: bool = True) -> Demonstration:
    if record.get("format_version") != DATASET_FORMAT_VERSION:
        raise DataError(f"unsupported dataset format_version {record.get('format_version')!r}")
    steps = []
    for s in record["steps"]:
        aids = [a["action_id"] for a in s["actions"]]
        feats = [np.asarray(a["features"], dtype=np.float64) for a in s["actions"]]
        if s["chosen_action_id"] not in aids:
            raise DataError("chosen action missing from the recorded legal set")
        steps.append(
            DemoStep(
                state_features=np.asarray(s["state_features"], dtype=np.float64),
                action_ids=aids,
                action_features=feats,
                chosen_action_id=s["chosen_action_id"],
            )
        )
    hidden = None if strip_eval else record.get("eval_only", {}).get("hidden_policy")
    return Demonstration(
        record["demonstrator_id"],
        steps,
        record["num_tasks"],
        record["num_agents"],
        hidden_policy=hidden,
    )


def save_demonstrations(path: str | Path, demos: Iterable[Demonstration]) -> None:
    lines = [serialize.dumps(demonstration_to_record(d)) for d in demos]
    Path(path).write_text("\n".join(lines) + ("\n" if lines else ""), encoding="utf-8")


def load_demonstrations(path: str | Path, strip_eval: bool = True) -> list[Demonstration]:
    import json

    demos = []
    with open(path, "r", encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if line:
                demos.append(demonstration_from_record(json.loads(line), strip_eval))
    return demos
