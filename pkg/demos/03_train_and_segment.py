"""
Train a tiny network and segment a held-out phantom
===================================================

The defaults describe a full-size model. Here everything is shrunk so the
script finishes in under a minute on one CPU core. Expect rough
kidneys and not much else at this budget.
"""
from canet.harness import TrainConfig, gen_phantom
from canet.harness.infer import infer
from canet.harness.train import train
from canet.metrics import CLASS_NAMES, evaluate_case
from canet.net import NetworkConfig
from canet.prep import foreground_stats, preprocess_case
from canet.voxcore import Rng

rng = Rng(2)
raw = [gen_phantom(rng.child(), (32, 32, 32)) for _ in range(4)]
train_raw, test_raw = raw[:3], raw[3]

stats = foreground_stats([v for v, _ in train_raw], [m for _, m in train_raw])
prepped = [preprocess_case(v, stats, m) for v, m in train_raw]

cfg = TrainConfig(epochs=8, steps_per_epoch=10, patch=(32, 32, 32), optimizer="adam", lr=0.01)
netcfg = NetworkConfig(stages=3, base_filters=4, max_axis_len=32)
result = train(prepped, cfg, netcfg, log=print)
print("parameters:", result.net.param_count())

labels = infer(test_raw[0], result.net, stats, patch=(32, 32, 32))
report = evaluate_case(labels, test_raw[1], "held_out")
for cid, s in report.scores.items():
    print(f"{CLASS_NAMES[cid]:>7}: DSC {s.dsc:.3f}  HD {s.hd_mm:.1f} mm  {' '.join(s.flags)}")
