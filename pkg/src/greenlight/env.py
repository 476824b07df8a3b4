"""Thin control-loop wrapper pairing the microsimulator with the sensing
stack: one decision per simulation second, infeasible switches absorbed by
the signal state machine."""

from __future__ import annotations

from . import core, sensing


class SignalEnv:
    """Episode environment for training and evaluation rollouts."""

    def __init__(self, intersection, demand, *, episode_len=3600, seed=0,
                 events=(), k=sensing.DEFAULT_K,
                 window_len=sensing.DEFAULT_WINDOW_LEN,
                 min_green=core.DEFAULT_MIN_GREEN, yellow=core.DEFAULT_YELLOW):
        self.intersection = intersection
        self.demand = demand
        self.episode_len = episode_len
        self.events = tuple(events)
        self.k = k
        self.window_len = window_len
        self.min_green = min_green
        self.yellow = yellow
        self.world = None
        self.window = None
        self.reset(seed)

    @property
    def num_movements(self):
        return self.intersection.num_movements

    @property
    def num_phases(self):
        return self.intersection.num_phases

    def reset(self, seed):
        self.world = core.make_world(
            self.intersection, self.demand, seed=seed, events=self.events,
            min_green=self.min_green, yellow=self.yellow)
        self.window = sensing.ObservationWindow(self.num_movements, k=self.k)
        sensing.push(self.window, sensing.build_sensor_state(self.world, self.window_len))
        return self.observe()

    def observe(self):
        """(stacked K x M x 7 window, available phase ids)."""
        return self.window.stacked(), sensing.available_phases(self.world)

    def step(self, target_phase):
        """Request a phase, advance one second, return (obs, avail, r, done)."""
        core.request_phase(self.world, target_phase)
        core.step(self.world)
        sensing.push(self.window, sensing.build_sensor_state(self.world, self.window_len))
        obs, avail = self.observe()
        done = self.world.clock >= self.episode_len
        return obs, avail, step_reward(self.world), done


def step_reward(world):
    """Negative mean accumulated waiting over vehicles currently present;
    zero for an empty intersection."""
    waits = [v.waiting for q in world.queues.values() for v in q]
    if not waits:
        return 0.0
    return -sum(waits) / len(waits)
