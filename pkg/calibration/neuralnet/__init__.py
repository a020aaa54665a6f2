"""Feed-forward networks in numpy: layers, heads, losses, Adam and training."""

from calibration.neuralnet.layers import LayerSpec
from calibration.neuralnet.losses import Loss, OutputHead, loss_and_grad, read_head
from calibration.neuralnet.network import Network, build, from_document
from calibration.neuralnet.optim import Adam, OptimizerConfig, learning_rate
from calibration.neuralnet.training import EarlyStopping, History, initialize_output, split_indices, train


def forward(net: Network, batch):
    return net.forward(batch)


def to_document(net: Network) -> dict:
    return net.to_document()


__all__ = [
    "LayerSpec",
    "OutputHead",
    "Loss",
    "OptimizerConfig",
    "Network",
    "Adam",
    "History",
    "EarlyStopping",
    "build",
    "forward",
    "loss_and_grad",
    "read_head",
    "train",
    "learning_rate",
    "initialize_output",
    "split_indices",
    "to_document",
    "from_document",
]
