"""Write the first three pooling stages of torchvision's VGG-16 as a
safetensors file for the `pretrained` perceptual extractor.

    python scripts/convert_vgg16.py vgg16_pool3.safetensors

Needs torch, torchvision and safetensors.
"""

import sys

import numpy as np
import torchvision
from safetensors.numpy import save_file

# torchvision `features` index of each convolution, grouped by stage
STAGES = [[0, 2], [5, 7], [10, 12, 14]]


def main(out):
    features = torchvision.models.vgg16(weights="IMAGENET1K_V1").features
    arrays = {}
    for s, convs in enumerate(STAGES, start=1):
        for k, idx in enumerate(convs, start=1):
            layer = features[idx]
            arrays[f"stage{s}.conv{k}.weight"] = layer.weight.detach().double().numpy().astype(np.float64)
            arrays[f"stage{s}.conv{k}.bias"] = layer.bias.detach().double().numpy().astype(np.float64)
    save_file(arrays, out)


if __name__ == "__main__":
    main(sys.argv[1] if len(sys.argv) > 1 else "vgg16_pool3.safetensors")
