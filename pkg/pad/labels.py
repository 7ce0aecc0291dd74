"""Class labels shared by the network, the manifests and the metrics."""

BONAFIDE = 0
ATTACK = 1

CLASS_NAMES = ('bonafide', 'attack')

ENVIRONMENTS = ('controlled', 'uncontrolled')


def label_index(name):
    return CLASS_NAMES.index(name)


def label_name(index):
    return CLASS_NAMES[int(index)]
