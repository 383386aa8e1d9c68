"""
Reprompt forgery against the plain and constrained pipelines
============================================================

The attacker inverts a watermarked latent with their own, slightly different
model and regenerates it under another prompt.  Against plain sign shading the
watermark survives and the forgery verifies; with the consistency projection
the inversion error is amplified and the forgery is rejected.
"""

from csguard import Prompt, generate_plain, generate_watermarked, invert_and_verify, invert_plain
from csguard.attack import AttackConfig, reprompt_forge
from csguard.harness import ExperimentConfig
from csguard.harness.experiment import build_assets, trial_setup

cfg = ExperimentConfig()
assets = build_assets(cfg)
print(f"attacker means are shifted by {cfg.attacker_mismatch} component stds")

for trial in range(4):
    s = trial_setup(cfg, trial)
    attack = AttackConfig(adversarial_prompt=s.adversarial_prompt)

    plain = generate_plain(s.key, s.payload, s.prompt, assets.params, assets.prior, assets.sched, s.seed)
    forged = reprompt_forge(plain.z0, assets.attacker_prior, attack, assets.sched)
    base, _ = invert_plain(forged, s.key, s.payload, assets.params, assets.prior, assets.sched)

    guarded = generate_watermarked(
        s.key, s.payload, s.prompt, assets.matrix, assets.params, assets.prior, assets.sched, s.seed
    )
    forged = reprompt_forge(guarded.z0, assets.attacker_prior, attack, assets.sched)
    cs, _ = invert_and_verify(forged, assets.matrix, s.key, s.payload, assets.params, assets.prior, assets.sched)

    print(
        f"trial {trial}: class {s.prompt.class_id} -> {s.adversarial_prompt.class_id} | "
        f"plain forgery {base.bit_accuracy:.3f} ({'accepted' if base.detected else 'rejected'}) | "
        f"constrained forgery {cs.bit_accuracy:.3f} ({'accepted' if cs.detected else 'rejected'})"
    )

# The same attack with the victim's exact model succeeds; this is the
# known limitation of the scheme.
same = reprompt_forge(guarded.z0, assets.prior, attack, assets.sched)
rep, _ = invert_and_verify(same, assets.matrix, s.key, s.payload, assets.params, assets.prior, assets.sched)
print(f"same-model attacker: {rep.bit_accuracy:.3f}, detected={rep.detected}")
