# Core engine for Mugak
