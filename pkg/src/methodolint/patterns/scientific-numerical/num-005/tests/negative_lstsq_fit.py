import numpy as np


def fit_polynomial(x, y, degree):
    X = np.vander(x, degree + 1)
    coeffs, residuals, rank, _ = np.linalg.lstsq(X, y, rcond=None)
    if rank < degree + 1:
        raise ValueError(f"rank-deficient design matrix (rank {rank})")
    return coeffs


samples = np.load("calibration_points.npy")
beta = fit_polynomial(samples[:, 0], samples[:, 1], degree=6)
print("coefficients:", beta)
