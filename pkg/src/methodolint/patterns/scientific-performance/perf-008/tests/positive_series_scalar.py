import pandas as pd


def kelvin(frame):
    return frame["temp_c"].apply(lambda t: t + 273.15)


def pressure_atm(frame):
    return frame["pressure_pa"].apply(lambda p: p / 101325.0)


chamber = pd.read_parquet("chamber_log.parquet")
chamber["temp_k"] = kelvin(chamber)
chamber["pressure_atm"] = pressure_atm(chamber)
print(chamber[["temp_k", "pressure_atm"]].describe())
