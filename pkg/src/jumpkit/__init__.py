"""Planar jumping-robot toolkit: closed-chain leg kinematics, a batched
simulator with a predictive joint filter, jump rewards with ballistic
densification, reference-state-initialization curriculum and a numpy PPO
trainer."""

__version__ = "0.1.0"
