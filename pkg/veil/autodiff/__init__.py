from .tensor import Tensor, backward, no_grad, is_recording
from .layers import conv2d, dense, relu, max_pool2d, crop_even, flatten, softmax, cross_entropy
from .optim import OptimizerState, sgd_step
from .gradcheck import finite_difference_gradient, relative_error
from .serialization import save_weights, load_weights
