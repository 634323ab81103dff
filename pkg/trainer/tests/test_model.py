import numpy as np
import pytest
import torch

from himtrain.model import build_model, parameter_count
from himtrain.train import predict


class TestArchitecture:
    def test_output_matches_input_size_single_channel(self):
        model = build_model(0.125)
        x = torch.zeros(1, 1, 400, 400)
        with torch.no_grad():
            y = model(x)
        assert y.shape == (1, 1, 400, 400)

    def test_sigmoid_outputs_in_unit_interval(self):
        model = build_model(0.125)
        p = predict(model, np.random.default_rng(0).random((96, 96)))
        assert p.min() > 0.0 and p.max() < 1.0

    def test_parameter_count_scales_with_width_squared(self):
        full = parameter_count(build_model(1.0))
        eighth = parameter_count(build_model(0.125))
        ratio = full / eighth
        assert abs(ratio - 64.0) / 64.0 < 0.10

    def test_constant_input_near_constant_at_init(self):
        # replicate padding keeps a constant input exactly constant through
        # every layer when norm layers run in inference mode
        model = build_model(0.25)
        model.eval()
        p = predict(model, np.full((128, 128), 0.4))
        assert float(p.max() - p.min()) < 0.1

    def test_invalid_width(self):
        with pytest.raises(ValueError):
            build_model(0.0)
