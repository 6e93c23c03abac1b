"""
AUC and AP on small rankings
============================

Anomaly scores are ranked with abnormal as the positive class. This script
compares both metrics with hand-counted values and shows how ties are treated.
"""
from restore_ad.evaluation import AP_TIE_RULE, ap, auc

###############################################################################
# A perfect ranking scores 1 on both metrics.
labels = [0, 0, 1, 1]
print("perfect  AUC", auc([0.1, 0.2, 0.8, 0.9], labels), "AP", ap([0.1, 0.2, 0.8, 0.9], labels))

###############################################################################
# One swapped pair: 3 of the 4 abnormal/normal pairs are ordered correctly.
scores = [0.1, 0.6, 0.5, 0.9]
print("one swap AUC", auc(scores, labels), "(3/4)")
print("one swap AP ", round(ap(scores, labels), 4), "(mean of precision 1 and 2/3)")

###############################################################################
# Ties count as half a correct pair for AUC and form one PR step for AP.
tied = [0.5, 0.5, 0.5, 0.5]
print("all tied AUC", auc(tied, labels), "AP", ap(tied, labels))
print("tie rule:", AP_TIE_RULE)

###############################################################################
# AUC only depends on the order of the scores.
print("squared  AUC", auc([s * s for s in scores], labels))
