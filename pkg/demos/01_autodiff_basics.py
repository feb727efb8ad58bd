# ## Tensors and reverse mode
#
# Every op records its parents and a backward closure; `backward` walks the
# graph once in reverse topological order.

import numpy as np

from thermocast import tensor as T
from thermocast.gradcheck import check_gradients, run_gradcheck
from thermocast.tensor import Tensor

x = Tensor([[1.0, -2.0], [0.5, 3.0]], requires_grad=True)
w = Tensor([[0.2], [-0.4]], requires_grad=True)

loss = T.reduce_mean(T.absolute(T.tanh(T.matmul(x, w))))
T.backward(loss)
print(loss.item())
print(w.grad)

# ## Same gradient by central differences

res = check_gradients("tanh_matmul", lambda: T.reduce_mean(T.absolute(T.tanh(T.matmul(x, w)))), {"x": x, "w": w})
print(res.line())

# ## Broadcasting a bias row

h = Tensor(np.ones((3, 4)), requires_grad=True)
b = Tensor(np.arange(4.0), requires_grad=True)
T.backward(T.reduce_sum(h * b))
b.grad  # each column summed over the 3 rows

# ## A broken backward rule is caught

for r in run_gradcheck(fault="softmax", only=["softmax", "add"]):
    print(r.line())
