"""Quick speed table: constraint families and the row-count ladder.

A condensed version of ``oscbf bench`` (which writes bench.md/bench.json).
"""

from oscbf.models import load_robot
from oscbf.scenarios import bench_rows_configs, table_speed_configs
from oscbf.sim import ScenarioConfig, benchmark

model = load_robot("panda")

print("per-family suite (rows / velocity kHz / torque kHz):")
for cfg_v, cfg_t in zip(table_speed_configs("velocity", 0.3),
                        table_speed_configs("torque", 0.3)):
    sv = benchmark(ScenarioConfig.from_dict(cfg_v), trials=1, model=model)
    st = benchmark(ScenarioConfig.from_dict(cfg_t), trials=1, model=model)
    name = cfg_v["name"].removeprefix("speed_")
    print(f"  {name:16s} {sv['rows']:4d}   {sv['median_freq_hz']/1e3:5.2f}   "
          f"{st['median_freq_hz']/1e3:5.2f}")

print("\ncollision scaling (rows / velocity kHz):")
for cfg in bench_rows_configs("velocity", 0.3):
    s = benchmark(ScenarioConfig.from_dict(cfg), trials=1, model=model)
    print(f"  {cfg['name']:10s} {s['rows']:5d}   {s['median_freq_hz']/1e3:5.2f}")
