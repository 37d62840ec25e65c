"""Observation and reward contract, PPO training and sequential halving."""
