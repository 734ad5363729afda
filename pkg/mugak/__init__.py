# Mugak core package
