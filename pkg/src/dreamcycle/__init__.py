"""Day/night rule learning: a rule controller records experience by day, a
spiking network replays it by night, and rules mined from the network's
activity are sent back as patches."""

__version__ = "0.1.0"
