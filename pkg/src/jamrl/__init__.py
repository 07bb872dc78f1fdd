"""Learning to avoid a Markov jammer: simulator, tiny Q-networks, hopping strategies."""

__version__ = "0.1.0"
