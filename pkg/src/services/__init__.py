# Services para o MCTP-ANCOVA
