"""Shared builders for small optimization instances."""
import numpy as np

from starris.channel import ChannelSet, IQIParams, Network, ScenarioConfig, generate_scenario
from starris.optimizer import Problem, SolverSettings, initial_ris, initial_state
from starris.rates import EEParams

FAST = SolverSettings(max_outer=5, ccp_inner_iters=3)


def small_problem(seed=0, set_kind="T_I", mode="ES", L=2, K=2, N_RIS=4, transmit_fraction=0.5,
                  rate_splitting=True, ee=None, **scenario):
    cfg = ScenarioConfig(L=L, K=K, M=2, N_BS=2, N_u=2, N_RIS=N_RIS, transmit_fraction=transmit_fraction,
                         direct_extra_loss_db=20.0, **scenario)
    _, ch = generate_scenario(seed, cfg)
    net = Network(ch, IQIParams.from_config(cfg))
    problem = Problem(net, ee or EEParams(), rate_splitting=rate_splitting)
    mask = np.random.default_rng([seed, 2]).random((cfg.M, N_RIS)) < 0.5 if mode == "MS" else None
    ris = initial_ris(cfg.M, N_RIS, set_kind, mode, mask, np.random.default_rng([seed, 1]))
    return problem, initial_state(problem, ris)


def scalar_network(h, noise_power=1.0):
    """One BS, one user, single antennas, no RIS paths, ideal hardware."""
    ch = ChannelSet(
        np.zeros((1, 1, 1, 1, 1), dtype=complex),
        np.zeros((1, 1, 1, 1), dtype=complex),
        np.full((1, 1, 1, 1, 1), h, dtype=complex),
        np.zeros((1, 1, 1), dtype=bool),
    )
    return Network(ch, IQIParams.ideal(1, 1, 1, 1, noise_power))
