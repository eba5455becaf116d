"""From jittered packets to (T, 24, 120) frames."""
from imuhar.datagen import GeneratorConfig, generate_recording
from imuhar.preprocess import expected_frame_count, interpolate_to_uniform, preprocess

cfg = GeneratorConfig(duration_min=(2.0, 2.0), min_recordings_per_class=0)
rec, labels = generate_recording(cfg, seed=3)
sig = interpolate_to_uniform(rec)
frames = preprocess(rec)
print("samples per sensor:", [s.timestamps.size for s in rec.sensors])
print("uniform signal:", sig.shape, "-> frames:", frames.values.shape)
print("closed-form frame count:", expected_frame_count(sig.shape[1]))
print("labels per frame:", labels.shape, "first ten:", labels[:10])
