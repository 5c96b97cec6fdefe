"""RF-dressed adiabatic potentials from single- and many-mode Floquet theory.

Modules: ``fields`` (static traps and RF tones), ``floquet`` (Floquet
matrices and eigen-decomposition), ``tracker`` (adiabatic surfaces by
eigenvector overlap), ``piecewise`` (nearest-resonance model), ``gpe``
(split-step condensate evolution), ``config``/``runs``/``cli`` (runs from
JSON configs).
"""

__version__ = "0.1.0"
