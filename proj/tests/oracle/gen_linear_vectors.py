# Independent reference for the linear workload: model encoding and y = Wx + b
# accumulated left to right, printed with Python's shortest repr.
import struct

W = [[0.1, 0.2, 0.3], [-1.25, 2.5, 1e-3]]
b = [0.5, -0.5]
X = [[1.5, 2.5, -3.0], [0.7, 0.0, 1e10]]

blob = struct.pack("<II", len(W), len(W[0]))
blob += b"".join(struct.pack("<d", v) for row in W for v in row)
blob += b"".join(struct.pack("<d", v) for v in b)
print("model", blob.hex())

for x in X:
    ys = []
    for i, row in enumerate(W):
        acc = 0.0
        for w, xv in zip(row, x):
            acc += w * xv
        ys.append(repr(acc + b[i]))
    print(",".join(ys))
