"""vitalgate: a fully software-simulated patient-vitals telemetry system.

Virtual body-sensor nodes stream framed readings to a coordinator gateway
that evaluates normal-range rules, logs a timestamped series, raises SMS
alerts through a GSM-style modem dialogue, and serves live data over HTTP.
"""

__version__ = "0.1.0"
