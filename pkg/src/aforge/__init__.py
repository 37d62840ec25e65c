"""Co-design of multirotor airframes and learned flight controllers."""
__version__ = "0.1.0"
