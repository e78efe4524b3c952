from .dqn import DqnAgent, DqnHyper, dqn_update
from .envs import CARTPOLE, POINTMASS, CartPole, EnvSpec, PointMass, ScriptedEnv, cartpole_step, make_env, pointmass_step
from .evaluate import evaluate
from .replay import ReplayBuffer, Transition
from .td3 import Td3Agent, Td3Hyper, td3lite_update

__all__ = [
    "CARTPOLE",
    "POINTMASS",
    "CartPole",
    "DqnAgent",
    "DqnHyper",
    "EnvSpec",
    "PointMass",
    "ReplayBuffer",
    "ScriptedEnv",
    "Td3Agent",
    "Td3Hyper",
    "Transition",
    "cartpole_step",
    "dqn_update",
    "evaluate",
    "make_env",
    "pointmass_step",
    "td3lite_update",
]
