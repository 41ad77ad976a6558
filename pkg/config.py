"""
Central configuration for the lab scripts.

Subcommands, the column order of every output table and the default output
locations shared by main.py and the run-directory scripts.
"""

# --- SUBCOMMANDS ---
SUBCOMMANDS = ("simulate", "equilibrium", "verify", "adjudicate", "converge", "deriv-check")

# --- OUTPUT LOCATIONS ---
OUTPUT_FOLDER = "outputs"
LOG_ENV = "FNL_LOG"

# --- EXIT CODES ---
EXIT_OK = 0
EXIT_ERROR = 1
EXIT_INCONCLUSIVE = 2

# --- COLUMN ORDER PER TABLE ---
# Leading columns of each table; columns not listed (per-agent extras)
# follow in the order they were produced.
TABLE_COLUMNS = {
    "simulate": [
        "scenario",
        "step",
        "time",
        "mean_wealth",
        "arithmetic_average",
        "geometric_average",
        "mean_strategy",
    ],
    "paths": ["scenario", "replication", "agent", "step", "time", "wealth"],
    "consistency": ["dt", "discrepancy", "stderr", "order", "scenarios"],
    "equilibrium": [
        "scenario",
        "step",
        "time",
        "phi_sigma",
        "psi_sigma",
        "e1_pi_sigma",
        "e1_pi_mu",
        "e1_pi2_Sigma",
    ],
    "verify": [
        "scenario",
        "step",
        "time",
        "drift_estimate",
        "stderr",
        "t_stat",
        "predicted_drift_mean",
        "n_replications",
    ],
    "perturbation": [
        "scenario",
        "offset",
        "deviators",
        "mean_drift",
        "stderr",
        "mean_predicted",
        "mean_quadratic",
        "mean_z",
        "max_abs_z",
        "negative_steps",
    ],
    "adjudicate": [
        "variant",
        "scenario",
        "step",
        "time",
        "drift_estimate",
        "stderr",
        "t_stat",
        "predicted_drift_mean",
        "n_replications",
    ],
    "converge": ["n", "phi_gap", "phi_gap_stderr", "psi_gap", "psi_gap_stderr", "w2_sq", "w2_sq_stderr"],
    "deriv-check": ["point", "subject", "entry", "analytic", "finite_diff", "rel_err", "tolerance"],
}
