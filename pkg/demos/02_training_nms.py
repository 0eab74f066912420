"""
Learning the check-node weight
==============================

The weight of NMS-1 is trained by unrolling 13 iterations and minimising the
iteration-averaged bit cross entropy with Adam. A short run already moves
the weight from 1.0 towards the 0.6 region; the default configuration uses
1500 steps.
"""
from nmsosd.codes import ccsds_128_64
from nmsosd.training import TrainingConfig, train

code = ccsds_128_64()
cfg = TrainingConfig(total_steps=150, batch_size=50)
print("SNR blend:", cfg.snr_grid())


def log(step, loss, params):
    print(f"step {step:4d}  loss {loss:8.3f}  zeta3 {params.zeta3:.4f}")


res = train(cfg, code, "NMS-1", log=log)
print("final zeta3:", round(res.params.zeta3, 4))
