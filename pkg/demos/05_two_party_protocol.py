# %% [markdown]
# # Insurer and trusted third party
#
# The insurer holds features and claims; a third party holds the privatized
# gender.  The insurer sends a payload without any gender column, the
# third party trains and sends back premiums.  Both messages are plain text.

# %%
import numpy as np

from ldpfair import fair, protocol, synth
from ldpfair.models import TrainConfig
from ldpfair.privacy import mechanism_for, privatize_dataset

ds = privatize_dataset(synth.dgp_sample(synth.SynthConfig(n=2000, seed=1)),
                       mechanism_for(0.85, 2), seed=1)
cfg = TrainConfig(seed=1)

payload, _ = protocol.insurer_prepare(ds, "raw", cfg=cfg)
payload_bytes = protocol.dumps_payload(payload)
protocol.audit_bytes(payload_bytes)
print(payload_bytes[:200].decode())

# %%
store = protocol.SensitiveStore.from_dataset(ds, mechanism_for(0.85, 2))
result = protocol.ttp_serve(protocol.loads_payload(payload_bytes), store,
                            protocol.ServeOptions(cfg=cfg))
result_bytes = protocol.dumps_result(result)
premiums = protocol.insurer_receive(protocol.loads_result(result_bytes))
print(premiums.head())

# %% [markdown]
# The exchange gives exactly what training in one process would.

# %%
_, local = fair.mptp_ldp(ds.replace(x=payload.representation, feature_names=()), 0.85,
                         "linear", cfg=cfg)
print("identical:", np.array_equal(local.raw_dfp, premiums.dfp.to_numpy()))
