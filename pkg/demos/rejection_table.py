"""
A small rejection-rate table
============================

Empirical size and power over a few scenarios, with the variance-explained
rule and fixed component counts side by side.
"""
from weaksep.simlab import SimulationScenario, RejectionTable, run_scenario

rules = ("FVE", (2, 2), (3, 3), (4, 4))
cells = [
    SimulationScenario("V1", "normal", 100, "H0", trials=50, pk_rules=rules),
    SimulationScenario("V1", "normal", 100, "half", trials=50, pk_rules=rules),
    SimulationScenario("V2", "t", 50, 0.055, trials=50, pk_rules=rules),
]

table = RejectionTable()
for sc in cells:
    table.rows.extend(run_scenario(sc).rows)

# rows are scenarios, columns are component-selection rules
print(table.to_csv())
