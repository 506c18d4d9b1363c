"""Generic UCT search over a finite-horizon decision model.

The model is duck-typed; anything with legal_actions/step/is_terminal (and
optionally rollout_action) works:

    legal_actions(state) -> sequence of actions (stable order)
    step(state, action) -> (next_state, reward in [0, 1])
    is_terminal(state) -> bool
    rollout_action(state, rng) -> action  (optional; defaults to first legal)

Transitions must be deterministic. Search depth is counted in decision
epochs; returns are discounted sums, so with rewards in [0, 1] every return
lies in [0, max_depth].
"""

from __future__ import annotations

import math
import random
from dataclasses import dataclass, field

from .errors import NoLegalAction


@dataclass(frozen=True)
class MctsConfig:
    iterations: int = 500
    uct_c: float = math.sqrt(2.0)
    max_depth: int = 3
    discount: float = 0.9


@dataclass
class DecisionNode:
    state: object
    depth: int
    parent: "DecisionNode | None" = None
    action: object = None  # action that led here
    children: list["DecisionNode"] = field(default_factory=list)
    untried: list = field(default_factory=list)
    rewards: dict = field(default_factory=dict)  # action -> edge reward
    visits: int = 0
    total_return: float = 0.0

    @property
    def mean_return(self) -> float:
        return self.total_return / self.visits if self.visits else 0.0


def _uct_pick(node: DecisionNode, c: float, discount: float) -> DecisionNode:
    log_n = math.log(node.visits)
    best = None
    best_score = -math.inf
    for child in node.children:
        q = node.rewards[child.action] + discount * child.mean_return
        score = q + c * math.sqrt(log_n / child.visits)
        if score > best_score:
            best = child
            best_score = score
    return best


def mcts_decide(model, root_state, config: MctsConfig | None = None,
                seed: int = 0) -> object:
    """Run UCT from root_state and return the action with most visits.

    Ties resolve to the earliest action in legal_actions order, so results
    are deterministic for a fixed seed.
    """
    node = search_tree(model, root_state, config, seed)
    best = None
    best_visits = -1
    for child in node.children:
        if child.visits > best_visits:
            best = child
            best_visits = child.visits
    return best.action


def search_tree(model, root_state, config: MctsConfig | None = None,
                seed: int = 0) -> DecisionNode:
    """Full UCT search; returns the root node with statistics attached."""
    cfg = config or MctsConfig()
    rng = random.Random(seed)
    actions = list(model.legal_actions(root_state))
    if not actions:
        raise NoLegalAction("root state has no legal action")
    root = DecisionNode(state=root_state, depth=0, untried=actions)

    for _ in range(cfg.iterations):
        node = root
        # Selection: descend fully expanded internal nodes.
        while (not node.untried and node.children
               and node.depth < cfg.max_depth
               and not model.is_terminal(node.state)):
            node = _uct_pick(node, cfg.uct_c, cfg.discount)
        # Expansion.
        if (node.untried and node.depth < cfg.max_depth
                and not model.is_terminal(node.state)):
            action = node.untried.pop(0)
            next_state, reward = model.step(node.state, action)
            child = DecisionNode(
                state=next_state, depth=node.depth + 1, parent=node,
                action=action,
                untried=(list(model.legal_actions(next_state))
                         if node.depth + 1 < cfg.max_depth
                         and not model.is_terminal(next_state) else []))
            node.rewards[action] = reward
            node.children.append(child)
            node = child
        # Rollout to the horizon with the default policy.
        value = _rollout(model, node.state, node.depth, cfg, rng)
        # Backup: fold edge rewards in while climbing.
        while node is not None:
            node.visits += 1
            node.total_return += value
            if node.parent is not None:
                value = node.parent.rewards[node.action] + cfg.discount * value
            node = node.parent
    return root


def _rollout(model, state, depth: int, cfg: MctsConfig,
             rng: random.Random) -> float:
    value = 0.0
    scale = 1.0
    while depth < cfg.max_depth and not model.is_terminal(state):
        actions = model.legal_actions(state)
        if not actions:
            break
        pick = getattr(model, "rollout_action", None)
        action = pick(state, rng) if pick is not None else actions[0]
        state, reward = model.step(state, action)
        value += scale * reward
        scale *= cfg.discount
        depth += 1
    return value
