# HSRL Services Module
