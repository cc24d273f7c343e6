import numpy as np


def exponential_filter(samples, alpha=0.1):
    # Each output depends on the previous output, so the loop expresses a
    # genuine recurrence rather than element-wise math.
    smoothed = np.empty_like(samples)
    smoothed[0] = samples[0]
    for i in range(1, len(samples)):
        smoothed[i] = alpha * samples[i] + (1 - alpha) * smoothed[i - 1]
    return smoothed


trace = np.load("sensor_trace.npy")
np.save("smoothed_trace.npy", exponential_filter(trace))
