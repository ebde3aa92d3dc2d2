"""Convex co-optimization of speed, power split, and battery thermals for
fuel-cell hybrid trains.

The package discretizes a journey over distance, fits convex quadratic
surrogates to the nonlinear powertrain maps, assembles a second-order cone
program whose relaxations are tight at the optimum, and cross-checks the
result against exact forward simulation and a dynamic-programming search.

Typical use::

    from hytrain import components, surrogates, socp, solve

    parts = components.load_components("components.json")
    fits = surrogates.SurrogateSet(
        motor=surrogates.fit_motor(parts.motor_map, parts.vehicle),
        fuelcell=surrogates.fit_fuelcell(parts.fuelcell_map, parts.vehicle),
        battery=surrogates.fit_battery(parts.battery),
    )
    ...

or drive everything through the ``hytrain`` command line tool.
"""

__version__ = "0.1.0"
