"""Reserve provision from aggregated EV fleets.

Aggregate flexibility envelopes, regression-based scenario forecasts and a
two-stage stochastic MPC that bids day-ahead reserve and dispatches charging.
"""

__version__ = "0.1.0"
