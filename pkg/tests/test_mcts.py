import itertools
import random

import pytest

from simrun.errors import NoLegalAction
from simrun.mcts import MctsConfig, mcts_decide, search_tree


class TableMdp:
    """Deterministic toy MDP: rewards drawn from a table keyed by (state, action)."""

    def __init__(self, n_actions: int, seed: int, n_states: int = 400):
        rng = random.Random(seed)
        self.n_actions = n_actions
        self.n_states = n_states
        self.rewards = [[rng.random() for _ in range(n_actions)]
                        for _ in range(n_states)]

    def legal_actions(self, state):
        return list(range(self.n_actions))

    def step(self, state, action):
        nxt = (state * 31 + action * 7 + 1) % self.n_states
        return nxt, self.rewards[state][action]

    def is_terminal(self, state):
        return False


def expectimax_best(mdp: TableMdp, root: int, depth: int, discount: float) -> int:
    """Exhaustive enumeration of all depth-step action sequences."""
    best_value = -1.0
    best_first = None
    for seq in itertools.product(range(mdp.n_actions), repeat=depth):
        state = root
        value = 0.0
        scale = 1.0
        for a in seq:
            state, r = mdp.step(state, a)
            value += scale * r
            scale *= discount
        if value > best_value:
            best_value = value
            best_first = seq[0]
    return best_first


def test_uct_matches_exhaustive_optimum_on_toy_mdps():
    cfg = MctsConfig(iterations=10_000, max_depth=3, discount=0.9)
    agree = 0
    for seed in range(20):
        mdp = TableMdp(n_actions=3 + seed % 3, seed=seed)
        want = expectimax_best(mdp, root=seed, depth=3, discount=0.9)
        got = mcts_decide(mdp, seed, cfg, seed=seed)
        agree += int(got == want)
    assert agree >= 19


def test_visit_count_invariants():
    mdp = TableMdp(n_actions=4, seed=1)
    cfg = MctsConfig(iterations=500)
    root = search_tree(mdp, 0, cfg, seed=3)
    assert root.visits == cfg.iterations

    def check(node):
        assert node.visits >= sum(c.visits for c in node.children)
        assert node.depth <= cfg.max_depth
        for c in node.children:
            assert c.visits >= 1
            check(c)

    check(root)


def test_deterministic_for_fixed_seed():
    mdp = TableMdp(n_actions=5, seed=7)
    cfg = MctsConfig(iterations=800)
    a = search_tree(mdp, 3, cfg, seed=11)
    b = search_tree(mdp, 3, cfg, seed=11)
    assert [c.visits for c in a.children] == [c.visits for c in b.children]
    assert mcts_decide(mdp, 3, cfg, seed=11) == mcts_decide(mdp, 3, cfg, seed=11)


class TiedMdp:
    """Both actions lead to identical rewards everywhere."""

    def legal_actions(self, state):
        return ["a", "b"]

    def step(self, state, action):
        return state + 1, 0.5

    def is_terminal(self, state):
        return False


def test_exact_tie_resolves_to_first_action():
    assert mcts_decide(TiedMdp(), 0, MctsConfig(iterations=1000), seed=0) == "a"


class DeadEnd:
    def legal_actions(self, state):
        return []

    def step(self, state, action):
        raise AssertionError("never stepped")

    def is_terminal(self, state):
        return False


def test_no_legal_action_raises():
    with pytest.raises(NoLegalAction):
        mcts_decide(DeadEnd(), 0, MctsConfig(iterations=10), seed=0)


class ShortEpisode:
    """Terminal after one step; returns must not exceed one reward."""

    def legal_actions(self, state):
        return [0, 1]

    def step(self, state, action):
        return "done", 1.0 if action == 1 else 0.2

    def is_terminal(self, state):
        return state == "done"


def test_terminal_states_stop_the_rollout():
    cfg = MctsConfig(iterations=300)
    root = search_tree(ShortEpisode(), "start", cfg, seed=1)
    for child in root.children:
        assert child.state == "done"
        assert child.children == []
    assert mcts_decide(ShortEpisode(), "start", cfg, seed=1) == 1


def test_returns_bounded_by_horizon():
    mdp = TableMdp(n_actions=3, seed=9)
    cfg = MctsConfig(iterations=2000, max_depth=3, discount=0.9)
    root = search_tree(mdp, 5, cfg, seed=2)
    bound = 1.0 + 0.9 + 0.81 + 1e-9

    def check(node):
        if node.visits:
            assert -1e-9 <= node.total_return / node.visits <= bound
        for c in node.children:
            check(c)

    check(root)
