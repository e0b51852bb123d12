"""Counter-flow exchanger: efficiency against duct length and flow rate.

Two tubes carry warm fluid upward and two carry cold fluid downward through
a periodic solid cell.  Efficiency close to 1 means the outlets have swapped
temperatures; -1 means nothing was exchanged.

    python demos/exchanger.py
"""
import numpy as np

from graetz.scenarios import decomposer, exchanger, exchanger_mesh, run_exchanger

mesh = exchanger_mesh(0.5, 32)
Ls = [0.5, 2.0, 6.0, 13.0]
print(f"exchanger cell, {mesh.n_vertices} vertices")
print("    Q  " + "".join(f"  L={L:<5g}" for L in Ls))
for Q in (1.0, 10.0, 30.0):
    dec = decomposer(exchanger(mesh, Q), 50, 50)
    eff = [run_exchanger(dec, L, Q).metrics.efficiency for L in Ls]
    print(f"{Q:5g}  " + "".join(f"  {e:7.4f}" for e in eff))
