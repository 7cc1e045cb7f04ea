# Fictitious LQ source package
