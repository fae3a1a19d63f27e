// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <string_view>

namespace ctxda {

// Same content as data/swda_damsl42.map.
inline constexpr std::string_view kDefaultTagMap = R"MAP(
# SWBD-DAMSL act tag -> 42-class collapsed label.
# Format: raw_tag_pattern<TAB>collapsed_label, first match wins, a trailing
# "*" matches any suffix. Before matching, a multi-tag ("qy,sd") keeps its
# first tag and the characters ( ) @ * and whitespace are removed.
# Clusters follow the standard Switchboard DAMSL clustering; the "other"
# class is the fo/o/fw/"/by/bc cluster and also receives unmapped tags.
# "+" marks a continuation: the utterance inherits the label of the
# previous utterance by the same speaker ("other" if there is none).
#
# The label vocabulary is the set of labels below in order of first
# appearance, excluding "+".
+	+
qy^d	qy^d
qw^d	qw^d
b^m	b^m
nn^e	ng
ny^e	na
^q*	^q
^h*	^h
^g*	^g
^2*	^2
qrr*	qrr
qr*	qy
qy*	qy
qw*	qw
qo*	qo
qh*	qh
sd*	sd
sv*	sv
fx*	sv
aap*	aap_am
am*	aap_am
aa*	aa
arp*	arp_nd
ar*	ar
nd*	arp_nd
na*	na
ng*	ng
nn*	nn
ny*	ny
no*	no
ba*	ba
fe*	ba
bk*	bk
bh*	bh
bf*	bf
br*	br
bd*	bd
by*	other
bc*	other
b*	b
%*	%
x*	x
h*	h
ad*	ad
fc*	fc
fp*	fp
fa*	fa
ft*	ft
t1*	t1
t3*	t3
oo*	oo_co_cc
co*	oo_co_cc
cc*	oo_co_cc
fo*	other
fw*	other
o*	other
"*	other
*	other
)MAP";

}  // namespace ctxda
